"""Run the bundled bots as standalone processes.

Each subcommand connects one bot client to a server and runs until
interrupted, e.g.::

    parley-bot echo --token <bot-token> --server-url http://127.0.0.1:5000
    parley-bot concierge --token <t> --waiting-room waiting --timeout 300
    parley-bot dito --token <t> --task 1 --pairs fixtures/image_pairs.json
    parley-bot moderator --token <t> --room task-room-1
    parley-bot relay --token <t> --room task-room-1 --drop-containing secret
"""

from __future__ import annotations

import asyncio
import logging

import click

from .concierge import ConciergeBot
from .dito import DiToBot, load_image_pairs
from .echo import EchoBot
from .moderator import ModeratorBot, RelayBot
from .sdk import BotClient

logger = logging.getLogger("parley.bots")


def common_options(fn):
    fn = click.option("--token", required=True, envvar="PARLEY_BOT_TOKEN",
                      help="Bot login token.")(fn)
    fn = click.option("--server-url", default="http://127.0.0.1:5000",
                      envvar="PARLEY_SERVER_URL", show_default=True,
                      help="Gateway base URL (the REST API is derived from it).")(fn)
    fn = click.option("--api-url", default=None, envvar="PARLEY_API_URL",
                      help="Separate REST API base URL, if different.")(fn)
    fn = click.option("--name", default=None, help="Display name for the bot user.")(fn)
    fn = click.option("--log-level", default="info",
                      type=click.Choice(["debug", "info", "warning", "error"]))(fn)
    return fn


def _run(main):
    try:
        asyncio.run(main)
    except KeyboardInterrupt:
        pass


async def _serve_forever(client: BotClient):
    try:
        while True:
            await asyncio.sleep(3600)
    finally:
        await client.disconnect()


def _client(server_url, token, api_url, name, log_level, default_name) -> BotClient:
    logging.basicConfig(level=log_level.upper())
    return BotClient(server_url, token, name=name or default_name, api_url=api_url)


@click.group()
def main():
    """Scripted participants and moderators for a parley server."""


@main.command()
@common_options
def echo(token, server_url, api_url, name, log_level):
    """Repeat every human text message back into the room."""

    async def run():
        client = _client(server_url, token, api_url, name, log_level, "echo")
        await client.connect()
        EchoBot(client)
        logger.info("echo bot connected as user %s", client.user_id)
        await _serve_forever(client)

    _run(run())


@main.command()
@common_options
@click.option("--waiting-room", required=True, help="Room to watch for incoming users.")
@click.option("--timeout", default=300.0, show_default=True,
              help="Seconds a lone participant waits before compensation.")
@click.option("--task-timeout", "task_timeouts", multiple=True,
              help="Per-task override as task_id:seconds; repeatable.")
@click.option("--code-prefix", default="", help="Prefix for compensation codes.")
@click.option("--code-key", default="parley-waiting", help="Key for deriving codes.")
def concierge(token, server_url, api_url, name, log_level, waiting_room, timeout,
              task_timeouts, code_prefix, code_key):
    """Pair incoming users into task rooms; compensate lonely waiters."""
    overrides = {}
    for spec in task_timeouts:
        task_id, _, seconds = spec.partition(":")
        overrides[int(task_id)] = float(seconds)

    async def run():
        client = _client(server_url, token, api_url, name, log_level, "concierge")
        await client.connect()
        bot = ConciergeBot(client, waiting_room, timeout=timeout,
                           task_timeouts=overrides, code_prefix=code_prefix,
                           code_key=code_key)
        await bot.start()
        logger.info("concierge watching %s", waiting_room)
        await _serve_forever(client)

    _run(run())


@main.command()
@common_options
@click.option("--task", "task_id", required=True, type=int, help="Task id this bot serves.")
@click.option("--pairs", required=True, type=click.Path(exists=True, dir_okay=False),
              help="JSON file with [[url_a, url_b], ...] image pairs.")
@click.option("--element", default="dito-image", show_default=True,
              help="Layout element id that shows the player's image.")
@click.option("--code-key", default="parley-dito", help="Key for completion codes.")
def dito(token, server_url, api_url, name, log_level, task_id, pairs, element, code_key):
    """Run the two-player spot-the-difference game in every task room."""

    async def run():
        client = _client(server_url, token, api_url, name, log_level, "dito")
        await client.connect()
        DiToBot(client, task_id, load_image_pairs(pairs), element_id=element,
                code_key=code_key)
        logger.info("dito bot serving task %s", task_id)
        await _serve_forever(client)

    _run(run())


@main.command()
@common_options
@click.option("--room", required=True, help="Room to moderate.")
@click.option("--order", default=None,
              help="Comma-separated user ids; defaults to the room's humans by join order.")
def moderator(token, server_url, api_url, name, log_level, room, order):
    """Enforce round-robin turn-taking by rotating the send permission."""

    async def run():
        client = _client(server_url, token, api_url, name, log_level, "moderator")
        await client.connect()
        await client.api("POST", f"/api/v1/users/{client.user_id}/move", {"to_room": room})
        if order:
            user_order = [int(part) for part in order.split(",")]
        else:
            info = await client.api("GET", f"/api/v1/rooms/{room}")
            user_order = [m["id"] for m in info["members"] if m["kind"] == "human"]
        bot = ModeratorBot(client, room, user_order)
        await bot.start()
        logger.info("moderating %s with order %s", room, user_order)
        await _serve_forever(client)

    _run(run())


@main.command()
@common_options
@click.option("--room", required=True, help="Room to intercept.")
@click.option("--drop-containing", default=None,
              help="Drop messages containing this substring instead of forwarding.")
def relay(token, server_url, api_url, name, log_level, room, drop_containing):
    """Intercept the room: forward human messages under their author's identity."""
    drop = (lambda text: drop_containing in text) if drop_containing else None

    async def run():
        client = _client(server_url, token, api_url, name, log_level, "relay")
        await client.connect()
        await client.api("POST", f"/api/v1/users/{client.user_id}/move", {"to_room": room})
        bot = RelayBot(client, room, drop=drop)
        await bot.start()
        logger.info("relaying %s", room)
        await _serve_forever(client)

    _run(run())


if __name__ == "__main__":
    main()

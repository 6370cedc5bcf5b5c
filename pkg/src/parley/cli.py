"""Operator command line: run the server, load fixtures, mint tokens.

Everything the CLI does besides ``serve`` goes through the public REST API,
so any of it can be reproduced with plain HTTP calls.
"""

from __future__ import annotations

import json
import logging
import socket
import sys
from pathlib import Path

import click
import httpx
import uvicorn

from .app import create_app
from .core import Core, ServerConfig
from .layout import LayoutError, parse_layout


@click.group()
def main():
    """parley: a real-time interaction server for dialog experiments."""


@main.command()
@click.option("--host", default="127.0.0.1", envvar="PARLEY_HOST", show_default=True)
@click.option("--port", default=5000, envvar="PARLEY_PORT", show_default=True, type=int)
@click.option("--data-dir", default="./data", envvar="PARLEY_DATA_DIR", show_default=True,
              type=click.Path(file_okay=False))
@click.option("--unsafe-html", is_flag=True, envvar="PARLEY_UNSAFE_HTML",
              help="Allow arbitrary element kinds in layouts.")
@click.option("--log-level", default="info", envvar="PARLEY_LOG_LEVEL", show_default=True,
              type=click.Choice(["debug", "info", "warning", "error"]))
def serve(host, port, data_dir, unsafe_html, log_level):
    """Start the server and print the freshly minted admin token."""
    logging.basicConfig(level=log_level.upper())
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        probe.bind((host, port))
    except OSError as e:
        click.echo(f"cannot bind {host}:{port}: {e}", err=True)
        sys.exit(1)
    finally:
        probe.close()

    config = ServerConfig(
        host=host, port=port, data_dir=Path(data_dir),
        unsafe_html=unsafe_html, log_level=log_level,
    )
    core = Core(config)
    admin_token = core.ensure_bootstrap()
    app = create_app(config, core=core)
    click.echo(f"admin token: {admin_token}")
    click.echo(f"api base:    http://{host}:{port}/api/v1")
    click.echo(f"chat url:    http://{host}:{port}/chat?token=<token>&name=<name>")
    # ws="websockets": the sans-io implementation lacks outbound flow control,
    # so slow clients would grow the transport buffer without bound instead of
    # tripping the per-connection send queue limit.
    uvicorn.run(
        app,
        host=host,
        port=port,
        log_level=log_level,
        ws="websockets",
        ws_ping_interval=config.ping_interval,
        ws_ping_timeout=config.ping_timeout,
    )


def _client(api_url: str, token: str) -> httpx.Client:
    return httpx.Client(base_url=api_url, headers={"Authorization": f"Bearer {token}"}, timeout=30)


def _fail(message: str, code: int = 2):
    click.echo(message, err=True)
    sys.exit(code)


def _post(client: httpx.Client, path: str, body) -> dict:
    response = client.post(path, json=body) if not isinstance(body, (str, bytes)) else \
        client.post(path, content=body, headers={"Content-Type": "application/json"})
    if response.status_code >= 400:
        _fail(f"{path}: {response.status_code} {response.text}")
    return response.json()


@main.command()
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click.option("--api-url", default="http://127.0.0.1:5000", envvar="PARLEY_API_URL", show_default=True)
@click.option("--token", required=True, envvar="PARLEY_TOKEN", help="Admin bearer token.")
def load(path, api_url, token):
    """Create resources from a layout file or a bundle file.

    A bundle may contain: "layout" (layout document), "rooms" (list of
    {id}), "task" ({name, num_users}), and "tokens" ({count, permissions,
    login_room, uses, bot}). Files are validated fully before anything is
    created, so a malformed file changes nothing.
    """
    raw = Path(path).read_text(encoding="utf-8")
    try:
        document = json.loads(raw)
    except json.JSONDecodeError as e:
        _fail(f"{path}: not valid JSON: {e}")

    if "title" in document:  # a bare layout document
        try:
            parse_layout(document, unsafe_html=True)
        except LayoutError as e:
            _fail(f"{path}: invalid layout at {e.path}: {e.message}")
        with _client(api_url, token) as client:
            layout = _post(client, "/api/v1/layouts", raw)
        click.echo(f"layout: {layout['id']}")
        return

    # bundle: validate everything locally first (all-or-nothing)
    layout_doc = document.get("layout")
    if layout_doc is not None:
        try:
            parse_layout(layout_doc, unsafe_html=True)
        except LayoutError as e:
            _fail(f"{path}: invalid layout at {e.path}: {e.message}")
    task_spec = document.get("task")
    if task_spec is not None:
        if layout_doc is None:
            _fail(f"{path}: a task needs a layout in the same bundle")
        if not isinstance(task_spec.get("num_users"), int) or task_spec["num_users"] < 1:
            _fail(f"{path}: task.num_users must be a positive integer")
        if not task_spec.get("name"):
            _fail(f"{path}: task.name must be non-empty")
    token_spec = document.get("tokens")
    if token_spec is not None:
        if not isinstance(token_spec.get("count"), int) or token_spec["count"] < 1:
            _fail(f"{path}: tokens.count must be a positive integer")
        if not token_spec.get("login_room"):
            _fail(f"{path}: tokens.login_room is required")
    rooms_spec = document.get("rooms", [])
    for spec in rooms_spec:
        if not spec.get("id"):
            _fail(f"{path}: every room needs an id")
    unknown = set(document) - {"layout", "rooms", "task", "tokens"}
    if unknown:
        _fail(f"{path}: unknown bundle keys: {sorted(unknown)}")

    with _client(api_url, token) as client:
        layout_id = None
        if layout_doc is not None:
            layout_id = _post(client, "/api/v1/layouts", json.dumps(layout_doc))["id"]
            click.echo(f"layout: {layout_id}")
        for spec in rooms_spec:
            room = _post(client, "/api/v1/rooms", {"id": spec["id"], "layout_id": layout_id})
            click.echo(f"room: {room['id']}")
        task_id = None
        if task_spec is not None:
            task = _post(client, "/api/v1/tasks", {
                "name": task_spec["name"], "num_users": task_spec["num_users"],
                "layout_id": layout_id,
            })
            task_id = task["id"]
            click.echo(f"task: {task_id}")
        if token_spec is not None:
            base = api_url.rstrip("/")
            for i in range(token_spec["count"]):
                created = _post(client, "/api/v1/tokens", {
                    "permissions": token_spec.get("permissions", []),
                    "login_room_id": token_spec["login_room"],
                    "task_id": task_id,
                    "uses": token_spec.get("uses", 1),
                    "bot": token_spec.get("bot", False),
                })
                click.echo(f"login: {base}/chat?token={created['id']}&name=player{i + 1}")


@main.command()
@click.option("--api-url", default="http://127.0.0.1:5000", envvar="PARLEY_API_URL", show_default=True)
@click.option("--token", required=True, envvar="PARLEY_TOKEN", help="Admin bearer token.")
@click.option("--permissions", default="send_text", show_default=True,
              help="Comma-separated permission flags.")
@click.option("--room", default="lobby", show_default=True, help="Login room id.")
@click.option("--task", default=None, type=int, help="Task id to bind the token to.")
@click.option("--uses", default=1, show_default=True, type=int)
@click.option("--bot", is_flag=True, help="Mint a bot token.")
def token(api_url, token, permissions, room, task, uses, bot):
    """Mint a login token and print its chat URL."""
    flags = [p.strip() for p in permissions.split(",") if p.strip()]
    with _client(api_url, token) as client:
        created = _post(client, "/api/v1/tokens", {
            "permissions": flags, "login_room_id": room, "task_id": task,
            "uses": uses, "bot": bot,
        })
    click.echo(f"token: {created['id']}")
    click.echo(f"login: {api_url.rstrip('/')}/chat?token={created['id']}&name=<name>")


if __name__ == "__main__":
    main()

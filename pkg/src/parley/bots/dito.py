"""DiTo bot: runs the two-player spot-the-difference game.

For every task room the concierge opens, the bot joins, shows each player a
different image of a configured pair, posts instructions, waits for both
players to send ``/ready``, and accepts ``/difference <text>`` as the
solution. On completion it closes the room and issues one completion code per
player.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .concierge import completion_code
from .sdk import ApiRequestError, BotClient

logger = logging.getLogger("parley.dito")

INSTRUCTIONS = (
    "Welcome to the game! You and your partner see two similar images with "
    "one difference. Describe what you see and find it together. Send /ready "
    "when you want to start, and /difference <your answer> once you agree."
)

PHASES = ("instructions", "awaiting_ready", "discussing", "done")


@dataclass
class DiToGame:
    room_id: str
    image_pair: tuple[str, str]
    players: list[int] = field(default_factory=list)
    ready: set[int] = field(default_factory=set)
    phase: str = "instructions"
    solution: Optional[str] = None


def load_image_pairs(path: str | Path) -> list[tuple[str, str]]:
    pairs = json.loads(Path(path).read_text(encoding="utf-8"))
    return [(a, b) for a, b in pairs]


class DiToBot:
    def __init__(self, client: BotClient, task_id: int, image_pairs: list[tuple[str, str]],
                 element_id: str = "dito-image", code_key: str = "parley-dito",
                 instructions: str = INSTRUCTIONS):
        if not image_pairs:
            raise ValueError("need at least one image pair")
        self.client = client
        self.task_id = task_id
        self.image_pairs = image_pairs
        self.element_id = element_id
        self.code_key = code_key
        self.instructions = instructions
        self.games: dict[str, DiToGame] = {}
        self._pair_cursor = 0

        client.on("room_created", self._on_room_created)
        client.on("room_state", self._on_room_state)
        client.on("joined", self._on_joined)
        client.on("command", self._on_command)

    # ------------------------------------------------------------------ setup

    async def _on_room_created(self, frame):
        if frame["payload"].get("task_id") != self.task_id:
            return
        room_id = frame["payload"]["room"]
        pair = self.image_pairs[self._pair_cursor % len(self.image_pairs)]
        self._pair_cursor += 1
        self.games[room_id] = DiToGame(room_id=room_id, image_pair=pair)
        try:
            await self.client.api(
                "POST", f"/api/v1/users/{self.client.user_id}/move", {"to_room": room_id}
            )
        except ApiRequestError as e:
            logger.error("could not join task room %s: %s", room_id, e)

    async def _on_room_state(self, frame):
        game = self.games.get(frame.get("room"))
        if game is None:
            return
        for member in frame["payload"].get("members", ()):
            if member["kind"] == "human":
                await self._track_player(game, member["id"])

    async def _on_joined(self, frame):
        game = self.games.get(frame.get("room"))
        if game is None:
            return
        user = frame["payload"]["user"]
        if user["kind"] == "human" and frame["payload"].get("reason") != "reconnect":
            await self._track_player(game, user["id"])

    async def _track_player(self, game: DiToGame, user_id: int):
        if user_id in game.players:
            return
        game.players.append(user_id)
        if len(game.players) == 2 and game.phase == "instructions":
            await self._begin(game)

    async def _begin(self, game: DiToGame):
        for player, url in zip(game.players, game.image_pair):
            await self.client.display_update(
                game.room_id, self.element_id, "set_image_src", url, scope=player
            )
        await self.client.send_text(game.room_id, self.instructions)
        game.phase = "awaiting_ready"

    # ------------------------------------------------------------------- play

    async def _on_command(self, frame):
        game = self.games.get(frame.get("room"))
        if game is None:
            return
        actor_id = frame["actor"]["id"]
        if actor_id not in game.players:
            return
        command = frame["payload"]["command"]
        if command == "ready":
            await self._on_ready(game, actor_id)
        elif command == "difference":
            await self._on_difference(game, actor_id, " ".join(frame["payload"]["args"]))

    async def _on_ready(self, game: DiToGame, actor_id: int):
        if game.phase not in ("awaiting_ready",):
            return
        game.ready.add(actor_id)  # idempotent: a second /ready changes nothing
        if game.ready >= set(game.players):
            game.phase = "discussing"
            await self.client.send_text(
                game.room_id, "Both players are ready. Discuss and find the difference!"
            )

    async def _on_difference(self, game: DiToGame, actor_id: int, text: str):
        if game.phase != "discussing":
            await self.client.send_text(
                game.room_id,
                "Not so fast! Both players must send /ready before you can answer.",
                to=actor_id,
            )
            return
        game.solution = text
        game.phase = "done"
        await self.client.send_text(
            game.room_id,
            "Thanks, your answer was recorded. You will each receive a completion code now.",
        )
        try:
            await self.client.api("POST", f"/api/v1/rooms/{game.room_id}/close")
        except ApiRequestError as e:
            logger.error("could not close room %s: %s", game.room_id, e)
        for player in game.players:
            code = completion_code(self.code_key, game.room_id, player)
            await self.client.issue_code(game.room_id, player, code, reason="task_complete")

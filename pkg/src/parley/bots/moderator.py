"""Moderation bots: round-robin turn-taking and channel interception.

:class:`ModeratorBot` enforces turn order by rotating the send_text permission:
only the current-turn user can post, the gateway rejects everyone else, and
offenders get a private reminder.

:class:`RelayBot` puts a room into relay (interception) mode: human messages
reach only this bot, which may forward them verbatim or transformed under the
original author's identity, drop them, or insert messages that were never
sent. The server log keeps every original with true authorship.
"""

from __future__ import annotations

import logging
from typing import Callable, Optional

from .sdk import BotClient

logger = logging.getLogger("parley.moderator")


class ModeratorBot:
    def __init__(self, client: BotClient, room_id: str, order: list[int]):
        self.client = client
        self.room_id = room_id
        self.order = list(order)
        self.current = 0
        self._token_of: dict[int, str] = {}
        client.on("text_message", self._on_text)
        client.on("rejected", self._on_rejected)

    async def start(self):
        """Take control: exactly one member may send until further notice."""
        for user_id in self.order:
            info = await self.client.api("GET", f"/api/v1/users/{user_id}")
            self._token_of[user_id] = info["token_id"]
        holder = self.order[self.current]
        for user_id in self.order:
            if user_id != holder:
                await self._set_send_text(user_id, False)
        await self._set_send_text(holder, True)
        await self.client.send_text(
            self.room_id, "Round-robin mode: please wait for your turn to type."
        )

    async def _set_send_text(self, user_id: int, allowed: bool):
        body = {"add": ["send_text"]} if allowed else {"remove": ["send_text"]}
        await self.client.api(
            "PATCH", f"/api/v1/tokens/{self._token_of[user_id]}/permissions", body
        )

    async def _on_text(self, frame):
        if frame.get("room") != self.room_id:
            return
        actor_id = frame["actor"]["id"]
        if not self.order or actor_id != self.order[self.current]:
            return
        # accepted message from the turn holder: pass the turn on
        next_index = (self.current + 1) % len(self.order)
        await self._set_send_text(self.order[self.current], False)
        await self._set_send_text(self.order[next_index], True)
        self.current = next_index

    async def _on_rejected(self, frame):
        if frame.get("room") != self.room_id:
            return
        payload = frame["payload"]
        if payload.get("event_type") != "text_message":
            return
        offender = payload["actor"]["id"]
        if offender in self.order:
            await self.client.send_text(
                self.room_id,
                "It is not your turn yet; please wait until the other participant has written.",
                to=offender,
            )


class RelayBot:
    def __init__(self, client: BotClient, room_id: str,
                 drop: Optional[Callable[[str], bool]] = None,
                 transform: Optional[Callable[[str], str]] = None):
        self.client = client
        self.room_id = room_id
        self.drop = drop or (lambda text: False)
        self.transform = transform or (lambda text: text)
        self.forwarded: list[str] = []
        self.dropped: list[str] = []
        self.inserted: list[str] = []
        client.on("text_message", self._on_text)

    async def start(self):
        receipt = await self.client.set_relay_mode(self.room_id, True)
        if not receipt.ok:
            raise RuntimeError(f"could not enable relay mode: {receipt.error_message}")

    async def stop(self):
        await self.client.set_relay_mode(self.room_id, False)

    async def _on_text(self, frame):
        if frame.get("room") != self.room_id:
            return
        if frame.get("receiver") != self.client.user_id:
            return  # not a trapped original
        actor = frame["actor"]
        if actor["kind"] != "human":
            return
        text = frame["payload"]["text"]
        if self.drop(text):
            self.dropped.append(text)
            return
        forwarded = self.transform(text)
        to = frame["payload"].get("intended_receiver")
        await self.client.send_text(self.room_id, forwarded, to=to, as_user=actor["id"])
        self.forwarded.append(forwarded)

    async def insert(self, as_user: int, text: str):
        """Insert a message that was never sent, under another user's identity."""
        await self.client.send_text(self.room_id, text, as_user=as_user)
        self.inserted.append(text)

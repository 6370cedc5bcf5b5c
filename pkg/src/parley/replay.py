"""Rebuild room state from exported logs.

Feeding an exported ndjson stream (or LogEntry list) into a fresh
:class:`ReplayState` reconstructs final membership, per-user permissions,
read-only status and the folded display state, and verifies the structural
log guarantees: gapless sequence numbers and non-decreasing timestamps.

joined/left events carry a ``reason``; only login/moved joins and moved/removed
leaves change membership. Disconnects and reconnects are presence changes and
leave membership untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .eventlog import LogEntry, parse_ndjson

MEMBERSHIP_JOIN_REASONS = {"login", "moved"}
MEMBERSHIP_LEAVE_REASONS = {"moved", "removed"}


class ReplayError(ValueError):
    pass


@dataclass
class ReplayRoomState:
    room_id: str
    members: set[int] = field(default_factory=set)
    read_only: bool = False
    permissions: dict[int, frozenset[str]] = field(default_factory=dict)
    display_updates: list[dict] = field(default_factory=list)
    typing: set[int] = field(default_factory=set)
    last_seq: int = 0
    last_time: str = ""

    def display_overrides(self, user_id: Optional[int] = None) -> list[dict]:
        return [
            p for p in self.display_updates
            if p.get("scope", "room") == "room" or (user_id is not None and p.get("scope") == user_id)
        ]


class ReplayState:
    def __init__(self):
        self.rooms: dict[str, ReplayRoomState] = {}

    def room(self, room_id: str) -> ReplayRoomState:
        state = self.rooms.get(room_id)
        if state is None:
            state = ReplayRoomState(room_id)
            self.rooms[room_id] = state
        return state

    def apply(self, entry: LogEntry):
        state = self.room(entry.room)
        if entry.seq != state.last_seq + 1:
            raise ReplayError(
                f"room {entry.room}: seq gap, expected {state.last_seq + 1} got {entry.seq}"
            )
        if state.last_time and entry.time < state.last_time:
            raise ReplayError(
                f"room {entry.room}: timestamp went backwards at seq {entry.seq}"
            )
        state.last_seq = entry.seq
        state.last_time = entry.time

        etype = entry.type
        payload = entry.payload
        if etype == "joined":
            user = payload["user"]
            state.permissions[user["id"]] = frozenset(user.get("permissions", ()))
            if payload.get("reason") in MEMBERSHIP_JOIN_REASONS:
                state.members.add(user["id"])
        elif etype == "left":
            user = payload["user"]
            if payload.get("reason") in MEMBERSHIP_LEAVE_REASONS:
                state.members.discard(user["id"])
        elif etype == "permission_update":
            user_id = payload["user"]
            state.permissions[user_id] = frozenset(payload.get("effective", ()))
        elif etype == "display_update":
            state.display_updates.append(payload)
        elif etype == "room_closed":
            state.read_only = True
        elif etype == "typing_started":
            if isinstance(entry.actor, int):
                state.typing.add(entry.actor)
        elif etype == "typing_stopped":
            if isinstance(entry.actor, int):
                state.typing.discard(entry.actor)

    def apply_all(self, entries) -> "ReplayState":
        for entry in entries:
            self.apply(entry)
        return self


def replay_ndjson(stream) -> ReplayState:
    return ReplayState().apply_all(parse_ndjson(stream))

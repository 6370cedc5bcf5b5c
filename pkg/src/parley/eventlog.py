"""Append-only per-room event log.

Entries are durable (sqlite + a live ndjson mirror per room) before delivery
receipts go out. Sequence numbers are gapless and strictly increasing per
room; timestamps are clamped to be non-decreasing within a room even if the
wall clock steps backwards.

Log schema (normative for exports): seq, room, time, actor, displayed_actor,
type, receiver, payload, request_id.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Optional, Union

from .store import Database

Actor = Union[int, str]  # user id, or "system"

SYSTEM_ACTOR = "system"


def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds").replace("+00:00", "Z")


@dataclass
class LogEntry:
    room: str
    seq: int
    time: str
    actor: Actor
    type: str
    payload: dict
    receiver: Optional[int] = None
    displayed_actor: Optional[int] = None
    request_id: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "room": self.room,
            "time": self.time,
            "actor": self.actor,
            "displayed_actor": self.displayed_actor,
            "type": self.type,
            "receiver": self.receiver,
            "payload": self.payload,
            "request_id": self.request_id,
        }

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict) -> "LogEntry":
        actor = data["actor"]
        if isinstance(actor, str) and actor != SYSTEM_ACTOR:
            actor = int(actor)
        return cls(
            room=data["room"],
            seq=data["seq"],
            time=data["time"],
            actor=actor,
            type=data["type"],
            payload=data["payload"],
            receiver=data.get("receiver"),
            displayed_actor=data.get("displayed_actor"),
            request_id=data.get("request_id"),
        )

    @classmethod
    def from_json_line(cls, line: str) -> "LogEntry":
        return cls.from_dict(json.loads(line))


class SeqConflict(RuntimeError):
    """Internal ordering fault: an event arrived with a stale sequence number."""


@dataclass
class _RoomLog:
    entries: list[LogEntry] = field(default_factory=list)
    last_time: str = ""
    file: Optional[IO[str]] = None


class EventLog:
    """Single appender per room (the server loop); readers see consistent prefixes."""

    def __init__(self, db: Database, logs_dir: str | Path):
        self.db = db
        self.logs_dir = Path(logs_dir)
        self.logs_dir.mkdir(parents=True, exist_ok=True)
        self._rooms: dict[str, _RoomLog] = {}
        for row in db.load_rows("events"):
            entry = LogEntry(
                room=row["room_id"],
                seq=row["seq"],
                time=row["time"],
                actor=row["actor"] if row["actor"] == SYSTEM_ACTOR else int(row["actor"]),
                type=row["type"],
                payload=json.loads(row["payload"]),
                receiver=row["receiver"],
                displayed_actor=row["displayed_actor"],
                request_id=row["request_id"],
            )
            log = self._room_log(entry.room)
            log.entries.append(entry)
            log.last_time = entry.time

    def _room_log(self, room_id: str) -> _RoomLog:
        log = self._rooms.get(room_id)
        if log is None:
            log = _RoomLog()
            self._rooms[room_id] = log
        return log

    def _mirror_file(self, room_id: str) -> IO[str]:
        log = self._room_log(room_id)
        if log.file is None:
            log.file = open(self.logs_dir / f"{room_id}.ndjson", "a", encoding="utf-8")
        return log.file

    def next_seq(self, room_id: str) -> int:
        return len(self._room_log(room_id).entries) + 1

    def append(self, room_id: str, type: str, actor: Actor, payload: dict,
               receiver: Optional[int] = None, displayed_actor: Optional[int] = None,
               request_id: Optional[str] = None) -> LogEntry:
        """Assign the next seq, persist, then mirror. Durable before return."""
        log = self._room_log(room_id)
        seq = len(log.entries) + 1
        time = now_iso()
        if log.last_time and time < log.last_time:
            time = log.last_time
        entry = LogEntry(
            room=room_id, seq=seq, time=time, actor=actor, type=type,
            payload=payload, receiver=receiver, displayed_actor=displayed_actor,
            request_id=request_id,
        )
        self.db.append_event(entry)
        f = self._mirror_file(room_id)
        f.write(entry.to_json_line() + "\n")
        f.flush()
        log.entries.append(entry)
        log.last_time = time
        return entry

    def entries(self, room_id: str, since_seq: int = 0) -> list[LogEntry]:
        entries = self._room_log(room_id).entries
        if since_seq <= 0:
            return list(entries)
        # seq is gapless 1..n, so slicing beats scanning
        return list(entries[since_seq:])

    def export_ndjson(self, room_id: str) -> str:
        return "".join(e.to_json_line() + "\n" for e in self._room_log(room_id).entries)

    def close(self):
        for log in self._rooms.values():
            if log.file is not None:
                log.file.close()
                log.file = None


def parse_ndjson(stream) -> list[LogEntry]:
    """Parse an exported ndjson stream (string or iterable of lines)."""
    if isinstance(stream, str):
        stream = stream.splitlines()
    entries = []
    for line in stream:
        line = line.strip()
        if line:
            entries.append(LogEntry.from_json_line(line))
    return entries

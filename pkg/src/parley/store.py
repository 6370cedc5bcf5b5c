"""SQLite persistence: tokens, users, rooms, tasks, layouts, memberships, events.

A single embedded database file keeps deployment one-binary. WAL journaling
with NORMAL synchronous mode makes per-event commits cheap while surviving
process kills (acknowledged writes live in the WAL before the ack goes out).
"""

from __future__ import annotations

import json
import sqlite3
from contextlib import contextmanager
from pathlib import Path

SCHEMA = """
CREATE TABLE IF NOT EXISTS meta (
  key TEXT PRIMARY KEY,
  value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS tokens (
  id TEXT PRIMARY KEY,
  permissions TEXT NOT NULL,
  login_room_id TEXT NOT NULL,
  task_id INTEGER,
  uses_remaining INTEGER NOT NULL,
  revoked INTEGER NOT NULL DEFAULT 0,
  bot INTEGER NOT NULL DEFAULT 0,
  visible_in_roster INTEGER NOT NULL DEFAULT 1
);
CREATE TABLE IF NOT EXISTS layouts (
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  document TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS tasks (
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  name TEXT NOT NULL,
  num_users INTEGER NOT NULL,
  layout_id INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS rooms (
  id TEXT PRIMARY KEY,
  layout_id INTEGER,
  read_only INTEGER NOT NULL DEFAULT 0,
  relay_bot_id INTEGER,
  video_session TEXT,
  task_id INTEGER
);
CREATE TABLE IF NOT EXISTS users (
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  display_name TEXT NOT NULL,
  kind TEXT NOT NULL,
  token_id TEXT NOT NULL,
  resume_key TEXT,
  visible_in_roster INTEGER NOT NULL DEFAULT 1
);
CREATE TABLE IF NOT EXISTS memberships (
  room_id TEXT NOT NULL,
  user_id INTEGER NOT NULL,
  PRIMARY KEY (room_id, user_id)
);
CREATE TABLE IF NOT EXISTS events (
  room_id TEXT NOT NULL,
  seq INTEGER NOT NULL,
  time TEXT NOT NULL,
  actor TEXT NOT NULL,
  displayed_actor INTEGER,
  type TEXT NOT NULL,
  receiver INTEGER,
  payload TEXT NOT NULL,
  request_id TEXT,
  PRIMARY KEY (room_id, seq)
);
"""


class Database:
    """Thin wrapper over a single sqlite3 connection (one writer, the server loop)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.conn = sqlite3.connect(str(self.path), isolation_level=None, check_same_thread=False)
        self.conn.row_factory = sqlite3.Row
        self.conn.execute("PRAGMA journal_mode=WAL")
        self.conn.execute("PRAGMA synchronous=NORMAL")
        self.conn.execute("PRAGMA foreign_keys=ON")
        self.conn.executescript(SCHEMA)

    def close(self):
        self.conn.close()

    @contextmanager
    def transaction(self):
        self.conn.execute("BEGIN")
        try:
            yield
        except BaseException:
            self.conn.execute("ROLLBACK")
            raise
        else:
            self.conn.execute("COMMIT")

    # -- meta ---------------------------------------------------------------

    def get_meta(self, key: str) -> str | None:
        row = self.conn.execute("SELECT value FROM meta WHERE key=?", (key,)).fetchone()
        return row["value"] if row else None

    def set_meta(self, key: str, value: str):
        self.conn.execute(
            "INSERT INTO meta(key, value) VALUES(?, ?) ON CONFLICT(key) DO UPDATE SET value=excluded.value",
            (key, value),
        )

    # -- tokens -------------------------------------------------------------

    def save_token(self, token):
        self.conn.execute(
            "INSERT INTO tokens(id, permissions, login_room_id, task_id, uses_remaining, revoked, bot, visible_in_roster)"
            " VALUES(?,?,?,?,?,?,?,?)"
            " ON CONFLICT(id) DO UPDATE SET permissions=excluded.permissions,"
            " uses_remaining=excluded.uses_remaining, revoked=excluded.revoked",
            (
                token.id,
                json.dumps(sorted(p.value for p in token.permissions)),
                token.login_room_id,
                token.task_id,
                token.uses_remaining,
                int(token.revoked),
                int(token.bot),
                int(token.visible_in_roster),
            ),
        )

    # -- layouts ------------------------------------------------------------

    def insert_layout(self, document_text: str) -> int:
        cur = self.conn.execute("INSERT INTO layouts(document) VALUES(?)", (document_text,))
        return cur.lastrowid

    # -- tasks --------------------------------------------------------------

    def insert_task(self, name: str, num_users: int, layout_id: int) -> int:
        cur = self.conn.execute(
            "INSERT INTO tasks(name, num_users, layout_id) VALUES(?,?,?)",
            (name, num_users, layout_id),
        )
        return cur.lastrowid

    # -- rooms --------------------------------------------------------------

    def save_room(self, room):
        self.conn.execute(
            "INSERT INTO rooms(id, layout_id, read_only, relay_bot_id, video_session, task_id)"
            " VALUES(?,?,?,?,?,?)"
            " ON CONFLICT(id) DO UPDATE SET read_only=excluded.read_only,"
            " relay_bot_id=excluded.relay_bot_id, video_session=excluded.video_session",
            (room.id, room.layout_id, int(room.read_only), room.relay_bot_id, room.video_session, room.task_id),
        )

    # -- users --------------------------------------------------------------

    def insert_user(self, display_name: str, kind: str, token_id: str, resume_key: str,
                    visible_in_roster: bool) -> int:
        cur = self.conn.execute(
            "INSERT INTO users(display_name, kind, token_id, resume_key, visible_in_roster) VALUES(?,?,?,?,?)",
            (display_name, kind, token_id, resume_key, int(visible_in_roster)),
        )
        return cur.lastrowid

    def add_membership(self, room_id: str, user_id: int):
        self.conn.execute(
            "INSERT OR IGNORE INTO memberships(room_id, user_id) VALUES(?,?)", (room_id, user_id)
        )

    def remove_membership(self, room_id: str, user_id: int):
        self.conn.execute(
            "DELETE FROM memberships WHERE room_id=? AND user_id=?", (room_id, user_id)
        )

    # -- events -------------------------------------------------------------

    def append_event(self, entry):
        self.conn.execute(
            "INSERT INTO events(room_id, seq, time, actor, displayed_actor, type, receiver, payload, request_id)"
            " VALUES(?,?,?,?,?,?,?,?,?)",
            (
                entry.room,
                entry.seq,
                entry.time,
                str(entry.actor),
                entry.displayed_actor,
                entry.type,
                entry.receiver,
                json.dumps(entry.payload, sort_keys=True, separators=(",", ":")),
                entry.request_id,
            ),
        )

    # -- bulk load on startup -------------------------------------------------

    def load_rows(self, table: str) -> list[sqlite3.Row]:
        order = {"events": " ORDER BY room_id, seq", "users": " ORDER BY id"}.get(table, "")
        return self.conn.execute(f"SELECT * FROM {table}{order}").fetchall()

"""Server core: the single-writer state machine behind the REST API and the
realtime gateway.

All mutation happens through methods on :class:`Core`, which run on the
server's event loop without awaiting mid-operation, so every operation is
atomic with respect to every other (one logical writer per room). Delivery
never blocks: frames are enqueued to per-connection bounded queues and slow
clients get disconnected rather than stalling a room.

The delivery rules live in :meth:`Core.recipients_for`; the event log is
written before any receipt is acknowledged (log-before-ack).
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol
from urllib.parse import urlparse

from . import layout as layout_mod
from .eventlog import SYSTEM_ACTOR, EventLog, LogEntry
from .model import (
    EventType,
    Permission,
    Room,
    Task,
    Token,
    User,
    UserKind,
    can_join,
    check_permission,
    parse_permissions,
)
from .store import Database

logger = logging.getLogger("parley.core")

ROOM_ID_RE = re.compile(r"^[A-Za-z0-9_-]{1,64}$")

# Close codes for the websocket gateway.
CLOSE_AUTH_FAILURE = 4001
CLOSE_TOKEN_EXHAUSTED = 4002
CLOSE_KICKED = 4003
CLOSE_QUEUE_OVERFLOW = 4004

MAX_TEXT_BYTES = 16 * 1024
KEYSTROKES_PER_SECOND = 20.0

# Log entry types replayed to a (re)joining client as chat history.
HISTORY_TYPES = frozenset({
    EventType.TEXT_MESSAGE.value,
    EventType.IMAGE_MESSAGE.value,
    EventType.CODE_ISSUED.value,
})

# Ephemeral types excluded from sync replay after a reconnect.
EPHEMERAL_TYPES = frozenset({
    EventType.TYPING_STARTED.value,
    EventType.TYPING_STOPPED.value,
    EventType.KEYSTROKE.value,
    EventType.MOUSE.value,
})


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 5000
    data_dir: Path = Path("./data")
    unsafe_html: bool = False
    ping_interval: float = 25.0
    ping_timeout: float = 60.0
    send_queue_limit: int = 1000
    log_level: str = "info"


class ApiError(Exception):
    """Operation failure with an HTTP-ish status and a machine-readable code."""

    def __init__(self, status: int, code: str, message: str, path: Optional[str] = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.path = path

    def body(self) -> dict:
        body = {"code": self.code, "message": self.message}
        if self.path is not None:
            body["path"] = self.path
        return body


def permission_denied(flag: Permission) -> ApiError:
    return ApiError(403, "permission_denied", f"requires permission {flag.value}")


def not_found(what: str, key) -> ApiError:
    return ApiError(404, "not_found", f"unknown {what}: {key}")


class AuthRejected(Exception):
    """Gateway authentication failure, carrying the websocket close code."""

    def __init__(self, close_code: int, reason: str):
        super().__init__(reason)
        self.close_code = close_code
        self.reason = reason


class Sink(Protocol):
    """Outbound side of a client connection (implemented by the gateway)."""

    def enqueue(self, frame: dict) -> bool: ...

    def shutdown(self, code: int, reason: str) -> None: ...


class _Throttle:
    """Token bucket; allows short bursts up to one second's allowance."""

    def __init__(self, rate: float):
        self.rate = rate
        self.allowance = rate
        self.last = time.monotonic()

    def allow(self) -> bool:
        now = time.monotonic()
        self.allowance = min(self.rate, self.allowance + (now - self.last) * self.rate)
        self.last = now
        if self.allowance < 1.0:
            return False
        self.allowance -= 1.0
        return True


@dataclass
class _UserRuntime:
    sink: Optional[Sink] = None
    keystroke_throttle: _Throttle = field(default_factory=lambda: _Throttle(KEYSTROKES_PER_SECOND))


class Core:
    def __init__(self, config: ServerConfig):
        self.config = config
        data_dir = Path(config.data_dir)
        data_dir.mkdir(parents=True, exist_ok=True)
        self.db = Database(data_dir / "parley.sqlite3")
        self.log = EventLog(self.db, data_dir / "logs")

        self.tokens: dict[str, Token] = {}
        self.users: dict[int, User] = {}
        self.rooms: dict[str, Room] = {}
        self.tasks: dict[int, Task] = {}
        self.layout_texts: dict[int, str] = {}
        self._layout_cache: dict[int, layout_mod.LayoutDocument] = {}
        self._users_by_resume: dict[str, int] = {}
        self._users_by_token: dict[str, list[int]] = {}

        self._runtime: dict[int, _UserRuntime] = {}
        self.typing: dict[str, set[int]] = {}
        self.claims: dict[str, dict[str, int]] = {}
        self.display_updates: dict[str, list[dict]] = {}

        self.admin_token_id: Optional[str] = None
        self._load()

    # ------------------------------------------------------------------ load

    def _load(self):
        for row in self.db.load_rows("tokens"):
            token = Token(
                id=row["id"],
                permissions=parse_permissions(json.loads(row["permissions"])),
                login_room_id=row["login_room_id"],
                task_id=row["task_id"],
                uses_remaining=row["uses_remaining"],
                revoked=bool(row["revoked"]),
                bot=bool(row["bot"]),
                visible_in_roster=bool(row["visible_in_roster"]),
            )
            self.tokens[token.id] = token
        for row in self.db.load_rows("layouts"):
            self.layout_texts[row["id"]] = row["document"]
        for row in self.db.load_rows("tasks"):
            self.tasks[row["id"]] = Task(
                id=row["id"], name=row["name"], num_users=row["num_users"], layout_id=row["layout_id"]
            )
        for row in self.db.load_rows("rooms"):
            self.rooms[row["id"]] = Room(
                id=row["id"],
                layout_id=row["layout_id"],
                read_only=bool(row["read_only"]),
                relay_bot_id=row["relay_bot_id"],
                video_session=row["video_session"],
                task_id=row["task_id"],
            )
        for row in self.db.load_rows("users"):
            user = User(
                id=row["id"],
                display_name=row["display_name"],
                kind=UserKind(row["kind"]),
                token_id=row["token_id"],
                resume_key=row["resume_key"],
                visible_in_roster=bool(row["visible_in_roster"]),
            )
            self.users[user.id] = user
            if user.resume_key:
                self._users_by_resume[user.resume_key] = user.id
            self._users_by_token.setdefault(user.token_id, []).append(user.id)
        for row in self.db.load_rows("memberships"):
            room = self.rooms.get(row["room_id"])
            user = self.users.get(row["user_id"])
            if room is not None and user is not None:
                room.members.add(user.id)
                user.rooms.add(room.id)
        # rebuild display folds from the persisted log
        for room_id in self.rooms:
            folds = [
                e.payload
                for e in self.log.entries(room_id)
                if e.type == EventType.DISPLAY_UPDATE.value
            ]
            if folds:
                self.display_updates[room_id] = folds

    def close(self):
        self.log.close()
        self.db.close()

    # ------------------------------------------------------------- bootstrap

    def ensure_bootstrap(self) -> str:
        """Create the lobby room and mint a fresh all-permission admin token."""
        if "lobby" not in self.rooms:
            room = Room(id="lobby", layout_id=None)
            self.rooms["lobby"] = room
            self.db.save_room(room)
        token = Token(
            id=Token.new_id(),
            permissions=set(Permission),
            login_room_id="lobby",
            uses_remaining=1_000_000,
            bot=True,
        )
        self.tokens[token.id] = token
        self.db.save_token(token)
        self.admin_token_id = token.id
        return token.id

    # ------------------------------------------------------------ ctx helpers

    def resolve_bearer(self, token_id: Optional[str]) -> Token:
        if not token_id or token_id not in self.tokens:
            raise ApiError(401, "unauthorized", "missing or unknown bearer token")
        return self.tokens[token_id]

    def _require(self, token: Token, flag: Permission):
        if not check_permission(token, flag):
            raise permission_denied(flag)

    def _actor_for_token(self, token: Token):
        """Attribute API actions to the token's user when unambiguous."""
        bound = self._users_by_token.get(token.id, [])
        return bound[0] if len(bound) == 1 else SYSTEM_ACTOR

    def get_user(self, user_id: int) -> User:
        user = self.users.get(user_id)
        if user is None:
            raise not_found("user", user_id)
        return user

    def get_room(self, room_id: str) -> Room:
        room = self.rooms.get(room_id)
        if room is None:
            raise not_found("room", room_id)
        return room

    def layout_for(self, room: Room) -> layout_mod.LayoutDocument:
        if room.layout_id is None:
            return layout_mod.parse_layout(layout_mod.DEFAULT_LAYOUT_DOCUMENT)
        cached = self._layout_cache.get(room.layout_id)
        if cached is None:
            cached = layout_mod.parse_layout(
                self.layout_texts[room.layout_id], unsafe_html=True
            )
            self._layout_cache[room.layout_id] = cached
        return cached

    # --------------------------------------------------------------- tokens

    def create_token(self, ctx: Token, permissions, login_room_id: str,
                     task_id: Optional[int] = None, uses: int = 1, bot: bool = False,
                     visible_in_roster: bool = True, request_id: Optional[str] = None) -> Token:
        self._require(ctx, Permission.TOKEN_ADMIN)
        try:
            perms = parse_permissions(permissions)
        except ValueError as e:
            raise ApiError(400, "invalid", str(e), path="permissions")
        if login_room_id not in self.rooms:
            raise not_found("room", login_room_id)
        if task_id is not None and task_id not in self.tasks:
            raise not_found("task", task_id)
        if uses < 1:
            raise ApiError(400, "invalid", "uses must be >= 1", path="uses")
        token = Token(
            id=Token.new_id(),
            permissions=perms,
            login_room_id=login_room_id,
            task_id=task_id,
            uses_remaining=uses,
            bot=bot,
            visible_in_roster=visible_in_roster,
        )
        self.tokens[token.id] = token
        self.db.save_token(token)
        return token

    def revoke_token(self, ctx: Token, token_id: str, request_id: Optional[str] = None) -> Token:
        self._require(ctx, Permission.TOKEN_ADMIN)
        token = self.tokens.get(token_id)
        if token is None:
            raise not_found("token", token_id)
        token.revoked = True
        self.db.save_token(token)
        self._emit_permission_events(token, added=[], removed=[], request_id=request_id)
        return token

    def update_permissions(self, ctx: Token, token_id: str, add, remove,
                           request_id: Optional[str] = None) -> set[Permission]:
        self._require(ctx, Permission.TOKEN_ADMIN)
        token = self.tokens.get(token_id)
        if token is None:
            raise not_found("token", token_id)
        try:
            add_set = parse_permissions(add)
            remove_set = parse_permissions(remove)
        except ValueError as e:
            raise ApiError(400, "invalid", str(e), path="permissions")
        token.permissions = (token.permissions | add_set) - remove_set
        self.db.save_token(token)
        self._emit_permission_events(
            token,
            added=sorted(p.value for p in add_set),
            removed=sorted(p.value for p in remove_set),
            request_id=request_id,
        )
        return set(token.permissions)

    def _emit_permission_events(self, token: Token, added, removed, request_id):
        effective = [] if token.revoked else sorted(p.value for p in token.permissions)
        for user_id in self._users_by_token.get(token.id, []):
            user = self.users[user_id]
            for room_id in sorted(user.rooms):
                self.emit(
                    room_id,
                    EventType.PERMISSION_UPDATE.value,
                    SYSTEM_ACTOR,
                    {
                        "user": user_id,
                        "added": list(added),
                        "removed": list(removed),
                        "effective": effective,
                        "revoked": token.revoked,
                    },
                    request_id=request_id,
                )

    # --------------------------------------------------------------- layouts

    def create_layout(self, ctx: Token, document, request_id: Optional[str] = None) -> int:
        self._require(ctx, Permission.TOKEN_ADMIN)
        try:
            parsed = layout_mod.parse_layout(document, unsafe_html=self.config.unsafe_html)
        except layout_mod.LayoutError as e:
            raise ApiError(400, "invalid_layout", e.message, path=e.path) from None
        if isinstance(document, (str, bytes)):
            text = document if isinstance(document, str) else document.decode("utf-8")
        else:
            text = json.dumps(document, indent=2, sort_keys=False)
        layout_id = self.db.insert_layout(text)
        self.layout_texts[layout_id] = text
        self._layout_cache[layout_id] = parsed
        return layout_id

    def get_layout_text(self, layout_id: int) -> str:
        if layout_id not in self.layout_texts:
            raise not_found("layout", layout_id)
        return self.layout_texts[layout_id]

    # ----------------------------------------------------------------- tasks

    def create_task(self, ctx: Token, name: str, num_users: int, layout_id: int,
                    request_id: Optional[str] = None) -> Task:
        self._require(ctx, Permission.TOKEN_ADMIN)
        if not name:
            raise ApiError(400, "invalid", "task name must be non-empty", path="name")
        if num_users < 1:
            raise ApiError(400, "invalid", "num_users must be >= 1", path="num_users")
        if layout_id not in self.layout_texts:
            raise not_found("layout", layout_id)
        task_id = self.db.insert_task(name, num_users, layout_id)
        task = Task(id=task_id, name=name, num_users=num_users, layout_id=layout_id)
        self.tasks[task_id] = task
        return task

    def task_info(self, ctx: Token, task_id: int) -> Task:
        self._require(ctx, Permission.ROOM_ADMIN)
        task = self.tasks.get(task_id)
        if task is None:
            raise not_found("task", task_id)
        return task

    # ----------------------------------------------------------------- rooms

    def create_room(self, ctx: Token, layout_id: Optional[int] = None,
                    room_id: Optional[str] = None, task_id: Optional[int] = None,
                    request_id: Optional[str] = None) -> Room:
        self._require(ctx, Permission.ROOM_ADMIN)
        if task_id is not None:
            task = self.tasks.get(task_id)
            if task is None:
                raise not_found("task", task_id)
            if layout_id is None:
                layout_id = task.layout_id
        if layout_id is not None and layout_id not in self.layout_texts:
            raise not_found("layout", layout_id)
        if room_id is not None:
            if not ROOM_ID_RE.match(room_id):
                raise ApiError(400, "invalid", "room id must match [A-Za-z0-9_-]{1,64}", path="id")
            if room_id in self.rooms:
                raise ApiError(409, "conflict", f"room {room_id!r} already exists", path="id")
        else:
            room_id = "r-" + uuid.uuid4().hex[:12]
        room = Room(id=room_id, layout_id=layout_id, task_id=task_id)
        self.rooms[room_id] = room
        self.db.save_room(room)
        entry = self.emit(
            room_id,
            EventType.ROOM_CREATED.value,
            self._actor_for_token(ctx),
            {"room": room_id, "task_id": task_id, "layout_id": layout_id},
            request_id=request_id,
        )
        self._notify_admin_bots(entry)
        return room

    def _notify_admin_bots(self, entry: LogEntry):
        """Room lifecycle notifications go to every connected room_admin bot.

        This is how task bots learn about rooms they should join, since they
        cannot be members before the room exists.
        """
        frame = None
        for user_id, runtime in self._runtime.items():
            if runtime.sink is None:
                continue
            user = self.users.get(user_id)
            if user is None or not user.is_bot:
                continue
            token = self.tokens.get(user.token_id)
            if not check_permission(token, Permission.ROOM_ADMIN):
                continue
            if frame is None:
                frame = self.frame_for(entry, user)
            self._send(user, runtime, frame)

    def close_room(self, ctx: Token, room_id: str, request_id: Optional[str] = None) -> Room:
        self._require(ctx, Permission.ROOM_ADMIN)
        room = self.get_room(room_id)
        if room.read_only:
            raise ApiError(409, "conflict", f"room {room_id!r} already closed")
        room.read_only = True
        self.db.save_room(room)
        self.emit(room_id, EventType.ROOM_CLOSED.value, self._actor_for_token(ctx), {"room": room_id},
                  request_id=request_id)
        return room

    def attach_video_session(self, ctx: Token, room_id: str, session_ref: str,
                             request_id: Optional[str] = None) -> Room:
        self._require(ctx, Permission.ROOM_ADMIN)
        room = self.get_room(room_id)
        if not session_ref:
            raise ApiError(400, "invalid", "session reference must be non-empty", path="session")
        if room.video_session is not None:
            raise ApiError(409, "conflict", f"room {room_id!r} already has a video session")
        room.video_session = session_ref
        self.db.save_room(room)
        self.emit(room_id, EventType.DISPLAY_UPDATE.value, SYSTEM_ACTOR,
                  {"video_session": session_ref}, request_id=request_id)
        return room

    # ------------------------------------------------------------ membership

    def move_user(self, ctx: Token, user_id: int, to_room_id: Optional[str],
                  from_room_id: Optional[str] = None, request_id: Optional[str] = None):
        self._require(ctx, Permission.ROOM_ADMIN)
        user = self.get_user(user_id)
        to_room = self.get_room(to_room_id) if to_room_id is not None else None
        from_room = None
        if from_room_id is not None:
            from_room = self.get_room(from_room_id)
            if user.id not in from_room.members:
                raise ApiError(400, "invalid", f"user {user_id} is not in room {from_room_id!r}",
                               path="from_room")
        if to_room is None and from_room is None:
            raise ApiError(400, "invalid", "need a from_room and/or to_room", path="to_room")

        if to_room is not None:
            # admission is decided on the membership state after the leave half
            hypothetical = User(
                id=user.id, display_name=user.display_name, kind=user.kind,
                token_id=user.token_id,
                rooms=user.rooms - ({from_room.id} if from_room else set()),
            )
            if not can_join(hypothetical, to_room):
                raise ApiError(
                    409, "membership_violation",
                    "human users occupy at most one room; supply from_room to move them",
                    path="from_room",
                )

        with self.db.transaction():
            if from_room is not None and (to_room is None or from_room.id != to_room.id):
                self._leave_room(user, from_room, reason="moved", request_id=request_id)
            if to_room is not None and user.id not in to_room.members:
                self._join_room(user, to_room, reason="moved", request_id=request_id)

    def kick_user(self, ctx: Token, user_id: int, request_id: Optional[str] = None):
        """Disconnect a user's live session (close code 4003). Membership is kept."""
        self._require(ctx, Permission.ROOM_ADMIN)
        user = self.get_user(user_id)
        runtime = self._runtime.get(user.id)
        if runtime is not None and runtime.sink is not None:
            sink = runtime.sink
            self.detach(user.id, sink)
            sink.shutdown(CLOSE_KICKED, "kicked by administrator")

    def _join_room(self, user: User, room: Room, reason: str, request_id: Optional[str] = None):
        room.members.add(user.id)
        user.rooms.add(room.id)
        self.db.add_membership(room.id, user.id)
        self._send_room_state(user, room, with_history=True)
        self.emit(
            room.id, EventType.JOINED.value, user.id,
            {"user": self.user_desc(user), "reason": reason},
            request_id=request_id,
        )

    def _leave_room(self, user: User, room: Room, reason: str, request_id: Optional[str] = None):
        self._stop_typing_if_needed(user, room)
        room.members.discard(user.id)
        user.rooms.discard(room.id)
        self.db.remove_membership(room.id, user.id)
        self.emit(
            room.id, EventType.LEFT.value, user.id,
            {"user": self.user_desc(user), "reason": reason},
            request_id=request_id,
        )

    def _stop_typing_if_needed(self, user: User, room: Room):
        typing = self.typing.get(room.id)
        if typing and user.id in typing:
            typing.discard(user.id)
            self.emit(room.id, EventType.TYPING_STOPPED.value, user.id, {"synthesized": True})

    # -------------------------------------------------------- authentication

    def login_with_token(self, token_id: str, display_name: Optional[str]) -> User:
        token = self.tokens.get(token_id)
        if token is None or token.revoked:
            raise AuthRejected(CLOSE_AUTH_FAILURE, "unknown or revoked token")
        if token.uses_remaining <= 0:
            raise AuthRejected(CLOSE_TOKEN_EXHAUSTED, "token exhausted")
        token.uses_remaining -= 1
        self.db.save_token(token)
        resume_key = uuid.uuid4().hex
        kind = UserKind.BOT if token.bot else UserKind.HUMAN
        user_id = self.db.insert_user(
            display_name or "", kind.value, token.id, resume_key, token.visible_in_roster
        )
        if not display_name:
            display_name = f"user-{user_id}"
            self.db.conn.execute(
                "UPDATE users SET display_name=? WHERE id=?", (display_name, user_id)
            )
        user = User(
            id=user_id,
            display_name=display_name,
            kind=kind,
            token_id=token.id,
            resume_key=resume_key,
            visible_in_roster=token.visible_in_roster,
        )
        self.users[user.id] = user
        self._users_by_resume[resume_key] = user.id
        self._users_by_token.setdefault(token.id, []).append(user.id)
        return user

    def resume_with_key(self, resume_key: str) -> User:
        user_id = self._users_by_resume.get(resume_key)
        if user_id is None:
            raise AuthRejected(CLOSE_AUTH_FAILURE, "unknown resume key")
        user = self.users[user_id]
        token = self.tokens.get(user.token_id)
        if token is None or token.revoked:
            raise AuthRejected(CLOSE_AUTH_FAILURE, "token revoked")
        return user

    def attach(self, user: User, sink: Sink, fresh_login: bool):
        """Bind a live connection to the user and bring the client up to date."""
        runtime = self._runtime.setdefault(user.id, _UserRuntime())
        if runtime.sink is not None and runtime.sink is not sink:
            old = runtime.sink
            runtime.sink = None
            old.shutdown(1000, "superseded by a new connection")
        was_connected = user.connected
        login_room = None
        if fresh_login:
            token = self.tokens[user.token_id]
            login_room = self.rooms.get(token.login_room_id)
            if login_room is not None:
                # membership first so the welcome frame already lists the room
                login_room.members.add(user.id)
                user.rooms.add(login_room.id)
                self.db.add_membership(login_room.id, user.id)
        runtime.sink = sink
        user.connected = True
        sink.enqueue({
            "type": "welcome",
            "payload": {
                "user_id": user.id,
                "name": user.display_name,
                "kind": user.kind.value,
                "resume_key": user.resume_key,
                "rooms": sorted(user.rooms),
            },
        })
        if fresh_login:
            if login_room is not None:
                self._send_room_state(user, login_room, with_history=True)
                self.emit(login_room.id, EventType.JOINED.value, user.id,
                          {"user": self.user_desc(user), "reason": "login"})
        else:
            # resumed session: snapshot every room (clients sync history by
            # seq); presence events only if the user was actually gone
            for room_id in sorted(user.rooms):
                room = self.rooms[room_id]
                self._send_room_state(user, room, with_history=False)
                if not was_connected:
                    self.emit(room.id, EventType.JOINED.value, user.id,
                              {"user": self.user_desc(user), "reason": "reconnect"})

    def detach(self, user_id: int, sink: Sink):
        """Unbind a connection; emits presence-left events but keeps membership."""
        runtime = self._runtime.get(user_id)
        if runtime is None or runtime.sink is not sink:
            return
        runtime.sink = None
        user = self.users[user_id]
        user.connected = False
        for room_id in sorted(user.rooms):
            room = self.rooms[room_id]
            self._stop_typing_if_needed(user, room)
            self.emit(room.id, EventType.LEFT.value, user.id,
                      {"user": self.user_desc(user), "reason": "disconnect"})
        for claims in self.claims.values():
            stale = [key for key, owner in claims.items() if owner == user_id]
            for key in stale:
                del claims[key]

    # ------------------------------------------------------------- gateway ops

    def handle_frame(self, user: User, frame: dict) -> dict:
        """Process one client frame; returns the receipt payload."""
        if not isinstance(frame, dict) or not isinstance(frame.get("type"), str):
            raise ApiError(400, "invalid", "frame must be an object with a string 'type'")
        ftype = frame["type"]
        payload = frame.get("payload") or {}
        if not isinstance(payload, dict):
            raise ApiError(400, "invalid", "payload must be an object", path="payload")
        to = frame.get("to")
        if to is not None and (not isinstance(to, int) or isinstance(to, bool)):
            raise ApiError(400, "invalid", "'to' must be a user id", path="to")

        if ftype == "sync":
            return self._op_sync(user, frame, payload)
        if ftype == "claim":
            return self._op_claim(user, frame, payload)
        if ftype == "set_relay_mode":
            return self._op_set_relay_mode(user, frame, payload)

        handlers = {
            EventType.TEXT_MESSAGE.value: self._op_text,
            EventType.IMAGE_MESSAGE.value: self._op_image,
            EventType.COMMAND.value: self._op_command,
            EventType.TYPING_STARTED.value: self._op_typing,
            EventType.TYPING_STOPPED.value: self._op_typing,
            EventType.KEYSTROKE.value: self._op_keystroke,
            EventType.BOUNDING_BOX.value: self._op_annotate,
            EventType.MOUSE.value: self._op_annotate,
            EventType.DISPLAY_UPDATE.value: self._op_display_update,
            EventType.CODE_ISSUED.value: self._op_code_issued,
        }
        handler = handlers.get(ftype)
        if handler is None:
            raise ApiError(400, "unknown_type", f"unknown event type {ftype!r}")
        room = self._room_for_frame(user, frame)
        entry = handler(user, room, ftype, payload, to)
        receipt = {"status": "ok"}
        if entry is not None:
            receipt["room"] = entry.room
            receipt["seq"] = entry.seq
        return receipt

    def _room_for_frame(self, user: User, frame: dict) -> Room:
        room_id = frame.get("room")
        if not isinstance(room_id, str):
            raise ApiError(400, "invalid", "frame must carry a room id", path="room")
        room = self.get_room(room_id)
        if user.id not in room.members:
            raise ApiError(403, "not_member", f"not a member of room {room_id!r}")
        return room

    def _require_user(self, user: User, flag: Permission):
        token = self.tokens.get(user.token_id)
        if not check_permission(token, flag):
            raise permission_denied(flag)

    def _op_text(self, user: User, room: Room, ftype, payload, to) -> LogEntry:
        self._require_user(user, Permission.SEND_TEXT)
        text = payload.get("text")
        if not isinstance(text, str) or text == "":
            raise ApiError(400, "invalid", "text must be a non-empty string", path="payload.text")
        if len(text.encode("utf-8")) > MAX_TEXT_BYTES:
            raise ApiError(400, "too_large", f"text exceeds {MAX_TEXT_BYTES} bytes")
        if room.read_only:
            raise ApiError(409, "read_only", f"room {room.id!r} is read-only")

        as_user = payload.get("as_user")
        displayed_actor = None
        if as_user is not None:
            if not user.is_bot:
                raise ApiError(403, "permission_denied", "impersonation is bot-only")
            self._require_user(user, Permission.SEND_IMPERSONATED)
            if not isinstance(as_user, int) or as_user not in room.members:
                raise ApiError(400, "invalid", "as_user must be a member of the room",
                               path="payload.as_user")
            displayed_actor = as_user

        out_payload = {"text": text}
        receiver = None
        if to is not None:
            self._require_user(user, Permission.SEND_PRIVATE)
            if to not in room.members:
                raise ApiError(400, "invalid", f"receiver {to} is not in room {room.id!r}", path="to")
            receiver = to
        receiver, out_payload = self._apply_relay_trap(user, room, receiver, out_payload)
        return self.emit(room.id, EventType.TEXT_MESSAGE.value, user.id, out_payload,
                         receiver=receiver, displayed_actor=displayed_actor)

    def _op_image(self, user: User, room: Room, ftype, payload, to) -> LogEntry:
        self._require_user(user, Permission.SEND_IMAGE)
        if to is not None:
            raise ApiError(400, "invalid", "image messages cannot be private", path="to")
        url = payload.get("url")
        if not isinstance(url, str) or not url:
            raise ApiError(400, "invalid", "url must be a non-empty string", path="payload.url")
        parts = urlparse(url)
        if parts.scheme not in ("http", "https") or not parts.netloc:
            raise ApiError(400, "invalid", f"malformed image url: {url!r}", path="payload.url")
        if room.read_only:
            raise ApiError(409, "read_only", f"room {room.id!r} is read-only")
        receiver, out_payload = self._apply_relay_trap(user, room, None, {"url": url})
        return self.emit(room.id, EventType.IMAGE_MESSAGE.value, user.id, out_payload,
                         receiver=receiver)

    def _apply_relay_trap(self, user: User, room: Room, receiver, payload):
        """In relay (interception) mode, human messages route only to the relay bot.

        The trapped entry records the relay bot as receiver (the routing truth)
        and keeps any private addressing intent in the payload so the bot can
        forward it faithfully.
        """
        if room.relay_bot_id is None or user.is_bot:
            return receiver, payload
        if receiver is not None:
            payload = dict(payload)
            payload["intended_receiver"] = receiver
        return room.relay_bot_id, payload

    def _op_command(self, user: User, room: Room, ftype, payload, to) -> LogEntry:
        self._require_user(user, Permission.SEND_COMMAND)
        command = payload.get("command")
        args = payload.get("args", [])
        if not isinstance(command, str) or not command:
            raise ApiError(400, "invalid", "command must be a non-empty string", path="payload.command")
        if not isinstance(args, list) or not all(isinstance(a, str) for a in args):
            raise ApiError(400, "invalid", "args must be a list of strings", path="payload.args")
        return self.emit(room.id, EventType.COMMAND.value, user.id,
                         {"command": command, "args": args})

    def _op_typing(self, user: User, room: Room, ftype, payload, to) -> LogEntry:
        self._require_user(user, Permission.TYPING_EVENTS)
        typing = self.typing.setdefault(room.id, set())
        if ftype == EventType.TYPING_STARTED.value:
            typing.add(user.id)
        else:
            typing.discard(user.id)
        return self.emit(room.id, ftype, user.id, {})

    def _op_keystroke(self, user: User, room: Room, ftype, payload, to) -> LogEntry:
        self._require_user(user, Permission.LIVE_TYPING)
        text = payload.get("text_so_far")
        if not isinstance(text, str):
            raise ApiError(400, "invalid", "text_so_far must be a string", path="payload.text_so_far")
        if len(text.encode("utf-8")) > MAX_TEXT_BYTES:
            raise ApiError(400, "too_large", f"draft exceeds {MAX_TEXT_BYTES} bytes")
        runtime = self._runtime.setdefault(user.id, _UserRuntime())
        if not runtime.keystroke_throttle.allow():
            raise ApiError(429, "throttled", "keystroke rate limit exceeded")
        return self.emit(room.id, EventType.KEYSTROKE.value, user.id, {"text_so_far": text})

    def _op_annotate(self, user: User, room: Room, ftype, payload, to) -> LogEntry:
        self._require_user(user, Permission.ANNOTATE)
        element_id = payload.get("element_id")
        layout = self.layout_for(room)
        if not isinstance(element_id, str) or element_id not in layout.element_ids():
            raise ApiError(400, "invalid", f"unknown element id {element_id!r}",
                           path="payload.element_id")
        if ftype == EventType.BOUNDING_BOX.value:
            coords = {}
            for key in ("x0", "y0", "x1", "y1"):
                value = payload.get(key)
                if not isinstance(value, (int, float)) or isinstance(value, bool):
                    raise ApiError(400, "invalid", f"{key} must be a number", path=f"payload.{key}")
                coords[key] = value
            x0, x1 = sorted((coords["x0"], coords["x1"]))
            y0, y1 = sorted((coords["y0"], coords["y1"]))
            out = {"element_id": element_id, "x0": x0, "y0": y0, "x1": x1, "y1": y1}
        else:
            for key in ("x", "y"):
                value = payload.get(key)
                if not isinstance(value, (int, float)) or isinstance(value, bool):
                    raise ApiError(400, "invalid", f"{key} must be a number", path=f"payload.{key}")
            out = {"element_id": element_id, "x": payload["x"], "y": payload["y"]}
        return self.emit(room.id, ftype, user.id, out)

    def _op_display_update(self, user: User, room: Room, ftype, payload, to) -> LogEntry:
        if not user.is_bot:
            raise ApiError(403, "permission_denied", "display updates are bot-only")
        self._require_user(user, Permission.LAYOUT_MODIFY)
        element_id = payload.get("element_id")
        layout = self.layout_for(room)
        if not isinstance(element_id, str) or element_id not in layout.element_ids():
            raise ApiError(400, "invalid", f"unknown element id {element_id!r}",
                           path="payload.element_id")
        mutation = payload.get("mutation")
        if mutation not in [m.value for m in layout_mod.DisplayMutation]:
            raise ApiError(400, "invalid", f"unknown mutation {mutation!r}", path="payload.mutation")
        kind = self._element_kind(layout, element_id)
        if not layout_mod.validate_mutation_for_kind(kind, mutation):
            raise ApiError(400, "invalid",
                           f"mutation {mutation!r} not valid for element kind {kind!r}",
                           path="payload.mutation")
        value = payload.get("value")
        if mutation == layout_mod.DisplayMutation.SET_ATTRIBUTE.value:
            if not isinstance(value, dict) or "name" not in value or "value" not in value:
                raise ApiError(400, "invalid", "set_attribute value needs {name, value}",
                               path="payload.value")
        scope = payload.get("scope", "room")
        if scope != "room":
            if not isinstance(scope, int) or isinstance(scope, bool) or scope not in room.members:
                raise ApiError(400, "invalid", "scope must be 'room' or a member user id",
                               path="payload.scope")
        out = {"element_id": element_id, "mutation": mutation, "value": value, "scope": scope}
        return self.emit(room.id, EventType.DISPLAY_UPDATE.value, user.id, out)

    def _element_kind(self, layout: layout_mod.LayoutDocument, element_id: str) -> str:
        def walk(elements):
            for el in elements:
                if el.id == element_id:
                    return el.kind
                found = walk(el.children)
                if found:
                    return found
            return None

        return walk(layout.elements) or "div"

    def _op_code_issued(self, user: User, room: Room, ftype, payload, to) -> LogEntry:
        self._require_user(user, Permission.ROOM_ADMIN)
        code = payload.get("code")
        if not isinstance(code, str) or not code:
            raise ApiError(400, "invalid", "code must be a non-empty string", path="payload.code")
        if to is None or to not in room.members:
            raise ApiError(400, "invalid", "code_issued requires a member receiver", path="to")
        return self.emit(room.id, EventType.CODE_ISSUED.value, user.id, dict(payload), receiver=to)

    def _op_set_relay_mode(self, user: User, frame, payload) -> dict:
        room = self._room_for_frame(user, frame)
        if not user.is_bot:
            raise ApiError(403, "permission_denied", "relay mode is bot-only")
        self._require_user(user, Permission.ROOM_ADMIN)
        enabled = payload.get("enabled")
        if not isinstance(enabled, bool):
            raise ApiError(400, "invalid", "enabled must be a boolean", path="payload.enabled")
        room.relay_bot_id = user.id if enabled else None
        self.db.save_room(room)
        return {"status": "ok", "room": room.id, "relay": enabled}

    def _op_claim(self, user: User, frame, payload) -> dict:
        room = self._room_for_frame(user, frame)
        key = payload.get("key")
        if not isinstance(key, str) or not key:
            raise ApiError(400, "invalid", "claim key must be a non-empty string", path="payload.key")
        claims = self.claims.setdefault(room.id, {})
        owner = claims.get(key)
        if owner is not None and owner != user.id:
            raise ApiError(409, "claimed", f"claim {key!r} held by user {owner}")
        claims[key] = user.id
        return {"status": "ok", "room": room.id, "claim": key}

    def _op_sync(self, user: User, frame, payload) -> dict:
        room = self._room_for_frame(user, frame)
        since = payload.get("since_seq", 0)
        if not isinstance(since, int) or since < 0:
            raise ApiError(400, "invalid", "since_seq must be a non-negative integer",
                           path="payload.since_seq")
        self._send_room_state(user, room, with_history=True, since_seq=since, replay_all_types=True)
        return {"status": "ok", "room": room.id}

    def notify_rejection(self, user: User, frame: dict, error: "ApiError"):
        """Tell bot members of a room that a member's event was rejected.

        Lets moderator-style bots react to out-of-turn attempts (the offender
        already got the error receipt). Only fires for policy rejections, not
        malformed input or rate limiting.
        """
        if error.code not in ("permission_denied", "read_only"):
            return
        room = self.rooms.get(frame.get("room")) if isinstance(frame.get("room"), str) else None
        if room is None or user.id not in room.members:
            return
        notice = {
            "type": "rejected",
            "room": room.id,
            "payload": {
                "actor": self.actor_desc(user.id),
                "event_type": frame.get("type"),
                "error": error.body(),
            },
        }
        for uid in room.members:
            member = self.users[uid]
            if not member.is_bot or not member.connected or uid == user.id:
                continue
            runtime = self._runtime.get(uid)
            if runtime is not None and runtime.sink is not None:
                self._send(member, runtime, notice)

    # --------------------------------------------------------------- delivery

    def recipients_for(self, entry: LogEntry, room: Room) -> set[int]:
        """The delivery rule: which connected members receive this event.

        - text/image/code: broadcast; private goes to actor, receiver and bot
          members; in relay mode human messages reach only the relay bot.
        - commands and mouse traces go to bot members only.
        - typing and keystrokes go to everyone but the typist.
        - joined/left for hidden bots stay between bots; the subject of a left
          is included so kicked/moved users learn about it.
        - display updates honor their scope; video session announcements only
          reach members holding video_subscribe.
        """
        connected = {uid for uid in room.members if self.users[uid].connected}
        bots = {uid for uid in connected if self.users[uid].is_bot}
        etype = entry.type
        actor = entry.actor if isinstance(entry.actor, int) else None

        if etype in (EventType.TEXT_MESSAGE.value, EventType.IMAGE_MESSAGE.value,
                     EventType.CODE_ISSUED.value):
            if entry.receiver is not None:
                allowed = bots | {entry.receiver}
                if actor is not None:
                    allowed.add(actor)
                if room.relay_bot_id is not None and entry.receiver == room.relay_bot_id \
                        and actor is not None and not self.users[actor].is_bot:
                    # trapped original: routed to the relay bot exclusively
                    allowed = {room.relay_bot_id}
            else:
                allowed = set(connected)
            if entry.displayed_actor is not None:
                # the impersonated identity never hears the forged copy; their
                # transcript stays what they actually wrote
                allowed.discard(entry.displayed_actor)
            return allowed & connected
        if etype == EventType.COMMAND.value:
            return bots
        if etype == EventType.MOUSE.value:
            return bots
        if etype in (EventType.TYPING_STARTED.value, EventType.TYPING_STOPPED.value,
                     EventType.KEYSTROKE.value):
            return connected - ({actor} if actor is not None else set())
        if etype == EventType.BOUNDING_BOX.value:
            return connected
        if etype == EventType.DISPLAY_UPDATE.value:
            if "video_session" in entry.payload:
                return {
                    uid for uid in connected
                    if check_permission(self.tokens.get(self.users[uid].token_id),
                                        Permission.VIDEO_SUBSCRIBE)
                }
            scope = entry.payload.get("scope", "room")
            if scope == "room":
                return connected
            return {scope} & connected
        if etype in (EventType.JOINED.value, EventType.LEFT.value):
            subject_id = entry.payload.get("user", {}).get("id")
            subject = self.users.get(subject_id) if subject_id is not None else None
            if subject is not None and subject.is_bot and not subject.visible_in_roster:
                return bots
            targets = set(connected)
            if etype == EventType.LEFT.value and subject is not None and subject.connected:
                targets.add(subject.id)
            return targets
        if etype in (EventType.PERMISSION_UPDATE.value, EventType.ROOM_CREATED.value,
                     EventType.ROOM_CLOSED.value):
            return connected
        return connected

    def emit(self, room_id: str, etype: str, actor, payload: dict,
             receiver: Optional[int] = None, displayed_actor: Optional[int] = None,
             request_id: Optional[str] = None) -> LogEntry:
        """Log an event durably, then fan it out. Returns the log entry."""
        room = self.get_room(room_id)
        entry = self.log.append(
            room_id, etype, actor, payload,
            receiver=receiver, displayed_actor=displayed_actor, request_id=request_id,
        )
        if etype == EventType.DISPLAY_UPDATE.value:
            self.display_updates.setdefault(room_id, []).append(entry.payload)
        for uid in self.recipients_for(entry, room):
            runtime = self._runtime.get(uid)
            if runtime is None or runtime.sink is None:
                continue
            self._send(self.users[uid], runtime, self.frame_for(entry, self.users[uid]))
        return entry

    def _send(self, user: User, runtime: _UserRuntime, frame: dict):
        sink = runtime.sink
        if sink is None:
            return
        if not sink.enqueue(frame):
            logger.warning("send queue overflow for user %s; disconnecting", user.id)
            self.detach(user.id, sink)
            sink.shutdown(CLOSE_QUEUE_OVERFLOW, "send queue overflow")

    def actor_desc(self, actor) -> dict:
        if actor == SYSTEM_ACTOR or actor is None:
            return {"id": None, "name": "system", "kind": "system"}
        user = self.users.get(actor)
        if user is None:
            return {"id": actor, "name": f"user-{actor}", "kind": "human"}
        return {"id": user.id, "name": user.display_name, "kind": user.kind.value}

    def frame_for(self, entry: LogEntry, recipient: User) -> dict:
        """Wire frame for one recipient.

        Impersonated events are presented to humans as authored by the
        displayed actor; bots (experiment apparatus) see true authorship plus
        the displayed identity. The log always has both.
        """
        frame = {
            "type": entry.type,
            "room": entry.room,
            "seq": entry.seq,
            "timestamp": entry.time,
            "actor": self.actor_desc(entry.actor),
            "payload": entry.payload,
        }
        if entry.receiver is not None:
            frame["receiver"] = entry.receiver
        if entry.displayed_actor is not None:
            if recipient.is_bot:
                frame["displayed_actor"] = self.actor_desc(entry.displayed_actor)
            else:
                frame["actor"] = self.actor_desc(entry.displayed_actor)
        return frame

    def _history_visible(self, entry: LogEntry, user: User) -> bool:
        if entry.displayed_actor == user.id:
            return False  # impersonated copies are hidden from the displayed identity
        if entry.receiver is None:
            return True
        actor = entry.actor if isinstance(entry.actor, int) else None
        if actor is not None and room_relay_trapped(entry, self.rooms.get(entry.room)):
            return user.id in (actor, entry.receiver)
        if user.is_bot:
            return True
        return user.id in (actor, entry.receiver)

    def _send_room_state(self, user: User, room: Room, with_history: bool,
                         since_seq: int = 0, replay_all_types: bool = False):
        runtime = self._runtime.get(user.id)
        if runtime is None or runtime.sink is None:
            return
        history = None
        if with_history:
            history = []
            for entry in self.log.entries(room.id, since_seq=since_seq):
                if replay_all_types:
                    if entry.type in EPHEMERAL_TYPES:
                        continue
                elif entry.type not in HISTORY_TYPES:
                    continue
                if self._history_visible(entry, user):
                    history.append(self.frame_for(entry, user))
        video_session = None
        if room.video_session is not None and check_permission(
            self.tokens.get(user.token_id), Permission.VIDEO_SUBSCRIBE
        ):
            video_session = room.video_session
        frame = {
            "type": "room_state",
            "room": room.id,
            "payload": {
                "room": room.id,
                "layout": self.render_for(user, room),
                "members": self.member_list(room, for_user=user),
                "read_only": room.read_only,
                "relay": room.relay_bot_id is not None,
                "video_session": video_session,
                "history": history,
            },
        }
        self._send(user, runtime, frame)

    def member_list(self, room: Room, for_user: Optional[User] = None) -> list[dict]:
        members = []
        for uid in sorted(room.members):
            member = self.users[uid]
            if (
                member.is_bot
                and not member.visible_in_roster
                and for_user is not None
                and not for_user.is_bot
            ):
                continue
            members.append(self.user_desc(member, with_connected=True))
        return members

    def user_desc(self, user: User, with_connected: bool = False) -> dict:
        token = self.tokens.get(user.token_id)
        desc = {
            "id": user.id,
            "name": user.display_name,
            "kind": user.kind.value,
            "permissions": sorted(p.value for p in token.permissions) if token else [],
            "task_id": token.task_id if token else None,
        }
        if with_connected:
            desc["connected"] = user.connected
        return desc

    def render_for(self, user: Optional[User], room: Room) -> dict:
        """Current display state: the layout with all applicable updates folded in."""
        layout = self.layout_for(room)
        updates = self.display_updates.get(room.id, ())
        if user is None:
            overrides = [p for p in updates if p.get("scope", "room") == "room"]
        else:
            overrides = [
                p for p in updates
                if p.get("scope", "room") == "room" or p.get("scope") == user.id
            ]
        return layout_mod.render(layout, overrides)

    # ------------------------------------------------------------------ query

    def get_logs(self, ctx: Token, room_id: str, since_seq: int = 0) -> list[LogEntry]:
        self._require(ctx, Permission.LOG_READ)
        self.get_room(room_id)
        return self.log.entries(room_id, since_seq=since_seq)

    def room_info(self, ctx: Token, room_id: str) -> dict:
        self._require(ctx, Permission.ROOM_ADMIN)
        room = self.get_room(room_id)
        return {
            "id": room.id,
            "layout_id": room.layout_id,
            "task_id": room.task_id,
            "read_only": room.read_only,
            "relay_bot_id": room.relay_bot_id,
            "video_session": room.video_session,
            "members": self.member_list(room),
            "display": self.render_for(None, room),
        }

    def user_info(self, ctx: Token, user_id: int) -> dict:
        self._require(ctx, Permission.TOKEN_ADMIN)
        user = self.get_user(user_id)
        token = self.tokens.get(user.token_id)
        info = self.user_desc(user, with_connected=True)
        info["token_id"] = user.token_id
        info["rooms"] = sorted(user.rooms)
        info["revoked"] = token.revoked if token else True
        return info

    def state_digest(self) -> str:
        """Stable hash of all persisted state; used to prove reads don't mutate."""
        state = {
            "tokens": {
                t.id: [sorted(p.value for p in t.permissions), t.login_room_id, t.task_id,
                       t.uses_remaining, t.revoked, t.bot]
                for t in self.tokens.values()
            },
            "users": {
                u.id: [u.display_name, u.kind.value, u.token_id, sorted(u.rooms)]
                for u in self.users.values()
            },
            "rooms": {
                r.id: [r.layout_id, sorted(r.members), r.read_only, r.relay_bot_id,
                       r.video_session, r.task_id]
                for r in self.rooms.values()
            },
            "tasks": {t.id: [t.name, t.num_users, t.layout_id] for t in self.tasks.values()},
            "layouts": self.layout_texts,
            "logs": {room_id: self.log.export_ndjson(room_id) for room_id in sorted(self.rooms)},
        }
        blob = json.dumps(state, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def room_relay_trapped(entry: LogEntry, room: Optional[Room]) -> bool:
    """Whether a logged message was a relay-trapped original (receiver == relay bot)."""
    if room is None or room.relay_bot_id is None:
        return False
    return entry.receiver == room.relay_bot_id and entry.displayed_actor is None

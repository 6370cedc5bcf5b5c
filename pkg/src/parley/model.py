"""Domain model: permissions, tokens, users, rooms, tasks and events.

Everything here is plain data plus pure decision functions. Mutation goes
through the server core, which owns consistency; these objects are safe to
hand out as snapshots.
"""

from __future__ import annotations

import enum
import uuid
from dataclasses import dataclass, field
from typing import Optional


class Permission(str, enum.Enum):
    """Capability flags carried by tokens. Flags are independent; none implies another."""

    SEND_TEXT = "send_text"
    SEND_IMAGE = "send_image"
    SEND_COMMAND = "send_command"
    SEND_PRIVATE = "send_private"
    SEND_IMPERSONATED = "send_impersonated"
    TYPING_EVENTS = "typing_events"
    LIVE_TYPING = "live_typing"
    ANNOTATE = "annotate"
    LAYOUT_MODIFY = "layout_modify"
    ROOM_ADMIN = "room_admin"
    TOKEN_ADMIN = "token_admin"
    LOG_READ = "log_read"
    VIDEO_PUBLISH = "video_publish"
    VIDEO_SUBSCRIBE = "video_subscribe"


ALL_PERMISSIONS = frozenset(Permission)


def parse_permissions(names) -> set[Permission]:
    """Parse an iterable of flag names, failing loudly on unknown ones."""
    perms = set()
    for name in names:
        try:
            perms.add(Permission(name))
        except ValueError:
            raise ValueError(f"unknown permission: {name!r}") from None
    return perms


class EventType(str, enum.Enum):
    TEXT_MESSAGE = "text_message"
    IMAGE_MESSAGE = "image_message"
    COMMAND = "command"
    TYPING_STARTED = "typing_started"
    TYPING_STOPPED = "typing_stopped"
    KEYSTROKE = "keystroke"
    BOUNDING_BOX = "bounding_box"
    MOUSE = "mouse"
    JOINED = "joined"
    LEFT = "left"
    DISPLAY_UPDATE = "display_update"
    PERMISSION_UPDATE = "permission_update"
    ROOM_CREATED = "room_created"
    ROOM_CLOSED = "room_closed"
    CODE_ISSUED = "code_issued"


# Event types that count as participant messages (blocked in read-only rooms).
MESSAGE_EVENT_TYPES = frozenset({EventType.TEXT_MESSAGE, EventType.IMAGE_MESSAGE})


class UserKind(str, enum.Enum):
    HUMAN = "human"
    BOT = "bot"


@dataclass
class Token:
    """Login capability: permission set, optional task binding, login room, remaining uses.

    ``bot`` marks tokens whose holders connect as bot users; user kind is
    server-assigned from the token, never client-claimed, because bot status
    grants visibility privileges. ``visible_in_roster`` only matters for bot
    tokens and lets a bot act as a hidden agent.
    """

    id: str
    permissions: set[Permission]
    login_room_id: str
    task_id: Optional[int] = None
    uses_remaining: int = 1
    revoked: bool = False
    bot: bool = False
    visible_in_roster: bool = True

    @staticmethod
    def new_id() -> str:
        return str(uuid.uuid4())


@dataclass
class User:
    """Human or bot participant. Humans occupy at most one room; bots any number."""

    id: int
    display_name: str
    kind: UserKind
    token_id: str
    rooms: set[str] = field(default_factory=set)
    connected: bool = False
    resume_key: Optional[str] = None
    visible_in_roster: bool = True

    @property
    def is_bot(self) -> bool:
        return self.kind is UserKind.BOT


@dataclass
class Room:
    """The space users interact in: members, a layout, and an ordered event stream."""

    id: str
    layout_id: Optional[int]
    members: set[int] = field(default_factory=set)
    read_only: bool = False
    relay_bot_id: Optional[int] = None
    video_session: Optional[str] = None
    task_id: Optional[int] = None


@dataclass
class Task:
    """Recipe for opening parallel rooms: a participant quota plus a layout."""

    id: int
    name: str
    num_users: int
    layout_id: int


def check_permission(token: Optional[Token], action: Permission) -> bool:
    """True iff the token exists, is not revoked, and carries ``action``."""
    if token is None or token.revoked:
        return False
    return action in token.permissions


def can_join(user: User, room: Room) -> bool:
    """Admission rule: humans hold at most one room; re-joins are idempotent.

    Pure decision; does not check room existence or read-only state.
    """
    if room.id in user.rooms:
        return True
    if user.kind is UserKind.HUMAN and len(user.rooms) >= 1:
        return False
    return True

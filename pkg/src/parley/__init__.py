"""parley: a self-hostable real-time interaction server for multi-party
dialog experiments, with a token-based permission system, declarative room
layouts, full event logging, and a bot SDK for scripted participants and
moderators.
"""

__version__ = "0.1.0"

from .core import ApiError, Core, ServerConfig  # noqa: F401
from .model import EventType, Permission, Room, Task, Token, User, UserKind  # noqa: F401

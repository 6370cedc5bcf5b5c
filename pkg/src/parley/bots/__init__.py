from .concierge import ConciergeBot, ConciergeState, completion_code  # noqa: F401
from .dito import DiToBot, DiToGame, load_image_pairs  # noqa: F401
from .echo import EchoBot  # noqa: F401
from .moderator import ModeratorBot, RelayBot  # noqa: F401
from .sdk import ApiRequestError, AuthFailed, BotClient, Receipt  # noqa: F401

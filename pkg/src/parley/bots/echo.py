"""Echo bot: the minimal overt participant. Repeats every human text message
back into the room; private messages get a private echo to the sender only.
"""

from __future__ import annotations

from .sdk import BotClient


class EchoBot:
    def __init__(self, client: BotClient):
        self.client = client
        client.on("text_message", self._on_text)

    async def _on_text(self, frame):
        actor = frame["actor"]
        if actor["id"] == self.client.user_id or actor["kind"] != "human":
            return
        text = frame["payload"]["text"]
        room = frame["room"]
        if frame.get("receiver") == self.client.user_id:
            await self.client.send_text(room, text, to=actor["id"])
        else:
            await self.client.send_text(room, text)

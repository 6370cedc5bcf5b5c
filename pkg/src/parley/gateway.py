"""Realtime gateway: the websocket endpoint behind ``/chat``.

Clients authenticate through the URL (``/chat?token=<id>&name=<name>`` or
``resume=<key>`` for session resumption). Frames are JSON objects
``{type, room, payload, to?}``; every client frame is answered by exactly one
``receipt`` frame, in order, so callers can match receipts FIFO. Server frames
additionally carry ``{seq, timestamp, actor, displayed_actor?}``.

Outbound delivery goes through a bounded per-connection queue drained by a
sender task; a client that cannot keep up is closed with code 4004 instead of
stalling the room.
"""

from __future__ import annotations

import asyncio
import json
import logging

from starlette.websockets import WebSocket, WebSocketDisconnect

from .core import (
    ApiError,
    AuthRejected,
    Core,
    User,
)

logger = logging.getLogger("parley.gateway")

_CLOSE_SENTINEL = object()


class GatewaySession:
    """One live websocket connection; implements the core's Sink protocol."""

    def __init__(self, websocket: WebSocket, user: User, queue_limit: int):
        self.websocket = websocket
        self.user = user
        self.queue: asyncio.Queue = asyncio.Queue(maxsize=queue_limit)
        self.closing = False
        self.close_code = 1000
        self.close_reason = ""

    def enqueue(self, frame: dict) -> bool:
        if self.closing:
            return True  # frames to a closing session are dropped, not an overflow
        try:
            self.queue.put_nowait(frame)
            return True
        except asyncio.QueueFull:
            return False

    def shutdown(self, code: int, reason: str) -> None:
        if self.closing:
            return
        self.closing = True
        self.close_code = code
        self.close_reason = reason
        try:
            self.queue.put_nowait(_CLOSE_SENTINEL)
        except asyncio.QueueFull:
            # queue jammed (overflow close): close out-of-band
            asyncio.get_running_loop().create_task(self._close_now())

    async def _close_now(self):
        try:
            await self.websocket.close(code=self.close_code, reason=self.close_reason)
        except Exception:
            pass

    async def sender_loop(self):
        try:
            while True:
                item = await self.queue.get()
                if item is _CLOSE_SENTINEL:
                    await self._close_now()
                    return
                await self.websocket.send_text(json.dumps(item, separators=(",", ":")))
        except Exception:
            pass  # connection went away; receive loop handles cleanup


async def chat_websocket(websocket: WebSocket):
    core: Core = websocket.app.state.core
    token_id = websocket.query_params.get("token")
    name = websocket.query_params.get("name")
    resume_key = websocket.query_params.get("resume")

    try:
        if resume_key:
            user = core.resume_with_key(resume_key)
            fresh_login = False
        else:
            user = core.login_with_token(token_id or "", name)
            fresh_login = True
    except AuthRejected as rejected:
        await websocket.accept()
        await websocket.close(code=rejected.close_code, reason=rejected.reason)
        return

    await websocket.accept()
    session = GatewaySession(websocket, user, core.config.send_queue_limit)
    sender = asyncio.create_task(session.sender_loop())
    core.attach(user, session, fresh_login=fresh_login)
    logger.info("user %s (%s) connected", user.id, user.display_name)

    try:
        while not session.closing:
            raw = await websocket.receive_text()
            receipt = _process_frame(core, user, raw)
            session.enqueue({"type": "receipt", "payload": receipt})
    except WebSocketDisconnect:
        pass
    except RuntimeError:
        pass  # receive after close (server-initiated shutdown)
    finally:
        core.detach(user.id, session)
        if not session.closing:
            session.shutdown(1000, "")
        await asyncio.sleep(0)  # let the sender flush the close sentinel
        if not sender.done():
            try:
                await asyncio.wait_for(sender, timeout=5)
            except asyncio.TimeoutError:
                sender.cancel()
        logger.info("user %s disconnected", user.id)


def _process_frame(core: Core, user: User, raw: str) -> dict:
    try:
        frame = json.loads(raw)
    except json.JSONDecodeError:
        return {"status": "error", "error": {"code": "invalid", "message": "frame is not valid JSON"}}
    try:
        return core.handle_frame(user, frame)
    except ApiError as e:
        if isinstance(frame, dict):
            core.notify_rejection(user, frame, e)
        return {"status": "error", "error": e.body()}
    except Exception:
        logger.exception("internal error handling frame from user %s", user.id)
        return {"status": "error", "error": {"code": "internal", "message": "internal server error"}}

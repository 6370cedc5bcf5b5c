"""Bot client library.

A :class:`BotClient` holds one websocket connection to the gateway (rooms are
multiplexed over it), a handler registry, and an HTTP helper for the admin
API. Handlers run sequentially in wire arrival order; a handler that raises
is logged and skipped, never fatal to the connection.

Reconnects are automatic with exponential backoff (0.5 s base, doubling,
capped at 30 s); after resuming, the client syncs each room from its last
seen sequence number, so handlers never fire twice for the same event.
"""

from __future__ import annotations

import asyncio
import json
import logging
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional
from urllib.parse import urlencode, urlsplit

import httpx
import websockets

from ..clock import Clock

logger = logging.getLogger("parley.sdk")

RECONNECT_BASE = 0.5
RECONNECT_FACTOR = 2.0
RECONNECT_CAP = 30.0


@dataclass
class Receipt:
    status: str
    room: Optional[str] = None
    seq: Optional[int] = None
    error_code: Optional[str] = None
    error_message: Optional[str] = None
    raw: Optional[dict] = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @classmethod
    def from_payload(cls, payload: dict) -> "Receipt":
        error = payload.get("error") or {}
        return cls(
            status=payload.get("status", "error"),
            room=payload.get("room"),
            seq=payload.get("seq"),
            error_code=error.get("code"),
            error_message=error.get("message"),
            raw=payload,
        )


class AuthFailed(ConnectionError):
    def __init__(self, close_code: Optional[int], reason: str):
        super().__init__(f"authentication rejected ({close_code}): {reason}")
        self.close_code = close_code
        self.reason = reason


class ApiRequestError(RuntimeError):
    def __init__(self, status: int, body):
        code = body.get("code") if isinstance(body, dict) else None
        message = body.get("message") if isinstance(body, dict) else str(body)
        super().__init__(f"API error {status} ({code}): {message}")
        self.status = status
        self.code = code
        self.body = body


def _ws_url(base_url: str) -> str:
    parts = urlsplit(base_url)
    scheme = {"http": "ws", "https": "wss"}.get(parts.scheme, parts.scheme)
    path = parts.path if parts.path and parts.path != "/" else ""
    if not path.endswith("/chat"):
        path = path.rstrip("/") + "/chat"
    return f"{scheme}://{parts.netloc}{path}"


def _http_url(base_url: str) -> str:
    parts = urlsplit(base_url)
    scheme = {"ws": "http", "wss": "https"}.get(parts.scheme, parts.scheme)
    return f"{scheme}://{parts.netloc}"


class BotClient:
    def __init__(self, server_url: str, token: str, name: str = "bot",
                 api_url: Optional[str] = None, clock: Optional[Clock] = None,
                 reconnect: bool = True):
        self.server_url = server_url
        self.token = token
        self.name = name
        self.clock = clock or Clock()
        self.reconnect = reconnect

        self.user_id: Optional[int] = None
        self.kind: Optional[str] = None
        self.resume_key: Optional[str] = None
        self.rooms: set[str] = set()
        self.last_seq: dict[str, int] = {}

        self._handlers: dict[str, list[Callable]] = {}
        self._pending: deque[asyncio.Future] = deque()
        self._send_lock: Optional[asyncio.Lock] = None
        self._ws = None
        self._reader_task: Optional[asyncio.Task] = None
        self._closing = False
        self._welcome: Optional[asyncio.Future] = None
        self._api_base = _http_url(api_url or server_url)
        self._http: Optional[httpx.AsyncClient] = None

    def _http_client(self) -> httpx.AsyncClient:
        if self._http is None:
            # lazy, and without TLS setup for plain-http servers (building an
            # unused SSL context costs tens of milliseconds per client)
            self._http = httpx.AsyncClient(
                base_url=self._api_base,
                headers={"Authorization": f"Bearer {self.token}"},
                timeout=30.0,
                verify=self._api_base.startswith("https"),
            )
        return self._http

    # ------------------------------------------------------------- connection

    async def connect(self) -> "BotClient":
        await self._dial(resume=False)
        self._reader_task = asyncio.create_task(self._run())
        await self._welcome
        return self

    async def _dial(self, resume: bool):
        params = {"name": self.name}
        if resume and self.resume_key:
            params["resume"] = self.resume_key
        else:
            params["token"] = self.token
        url = f"{_ws_url(self.server_url)}?{urlencode(params)}"
        ws = await websockets.connect(url, max_size=2**22)
        # an auth rejection closes immediately; surface the close code
        try:
            first = await ws.recv()
        except websockets.exceptions.ConnectionClosed as closed:
            code = closed.rcvd.code if closed.rcvd else None
            reason = closed.rcvd.reason if closed.rcvd else ""
            raise AuthFailed(code, reason) from None
        self._ws = ws
        loop = asyncio.get_running_loop()
        self._welcome = loop.create_future()
        self._handle_raw(first)

    async def disconnect(self):
        self._closing = True
        if self._ws is not None:
            await self._ws.close()
        if self._reader_task is not None:
            try:
                await asyncio.wait_for(self._reader_task, timeout=5)
            except (asyncio.TimeoutError, asyncio.CancelledError):
                self._reader_task.cancel()
        if self._http is not None:
            await self._http.aclose()

    async def _run(self):
        attempt = 0
        while not self._closing:
            try:
                async for raw in self._ws:
                    self._handle_raw(raw)
                    attempt = 0
            except websockets.exceptions.ConnectionClosed:
                pass
            except Exception:
                logger.exception("reader crashed")
            self._fail_pending(ConnectionError("connection lost"))
            if self._closing or not self.reconnect:
                return
            delay = min(RECONNECT_CAP, RECONNECT_BASE * (RECONNECT_FACTOR ** attempt))
            attempt += 1
            logger.info("reconnecting in %.1fs (attempt %d)", delay, attempt)
            await self.clock.sleep(delay)
            if self._closing:
                return
            try:
                await self._dial(resume=True)
                for room in sorted(self.rooms):
                    await self._send_raw({
                        "type": "sync", "room": room,
                        "payload": {"since_seq": self.last_seq.get(room, 0)},
                    })
            except (AuthFailed, OSError, websockets.exceptions.WebSocketException) as e:
                logger.warning("reconnect failed: %s", e)
                if isinstance(e, AuthFailed):
                    return

    def _fail_pending(self, error: Exception):
        while self._pending:
            fut = self._pending.popleft()
            if not fut.done():
                fut.set_exception(error)

    # --------------------------------------------------------------- handlers

    def on(self, event_type: str, handler: Callable) -> "BotClient":
        """Register a handler (sync or async). "*" receives every frame."""
        self._handlers.setdefault(event_type, []).append(handler)
        return self

    def _handle_raw(self, raw):
        frame = json.loads(raw)
        ftype = frame.get("type")
        if ftype == "receipt":
            if self._pending:
                fut = self._pending.popleft()
                if not fut.done():
                    fut.set_result(Receipt.from_payload(frame.get("payload", {})))
            return
        if ftype == "welcome":
            payload = frame["payload"]
            self.user_id = payload["user_id"]
            self.kind = payload["kind"]
            self.resume_key = payload["resume_key"]
            self.rooms.update(payload.get("rooms", ()))
            if self._welcome is not None and not self._welcome.done():
                self._welcome.set_result(True)
            return
        asyncio.get_running_loop().create_task(self._dispatch_sequential(frame))

    async def _dispatch_sequential(self, frame: dict):
        # chain on a rolling task so handlers run one at a time, in order
        prev = getattr(self, "_dispatch_tail", None)
        fut = asyncio.get_running_loop().create_future()
        self._dispatch_tail = fut
        if prev is not None:
            await prev
        try:
            await self._dispatch(frame)
        finally:
            fut.set_result(None)

    async def _dispatch(self, frame: dict):
        ftype = frame.get("type")
        room = frame.get("room")
        seq = frame.get("seq")
        if ftype == "room_state":
            if room:
                self.rooms.add(room)
            await self._fire(frame)
            for entry in frame.get("payload", {}).get("history") or ():
                await self._replay_entry(entry)
            return
        if seq is not None and room is not None:
            if seq <= self.last_seq.get(room, 0):
                return
            self.last_seq[room] = seq
        await self._fire(frame)

    async def _replay_entry(self, entry: dict):
        room = entry.get("room")
        seq = entry.get("seq")
        if room is not None and seq is not None:
            if seq <= self.last_seq.get(room, 0):
                return
            self.last_seq[room] = seq
        await self._fire(entry)

    async def _fire(self, frame: dict):
        handlers = list(self._handlers.get(frame.get("type"), ())) + \
            list(self._handlers.get("*", ()))
        for handler in handlers:
            try:
                result = handler(frame)
                if asyncio.iscoroutine(result):
                    await result
            except Exception:
                logger.exception("handler for %s failed", frame.get("type"))

    # -------------------------------------------------------------------- emit

    async def _send_raw(self, frame: dict):
        if self._ws is None:
            raise ConnectionError("not connected")
        await self._ws.send(json.dumps(frame, separators=(",", ":")))

    async def emit(self, event_type: str, room: str, payload: Optional[dict] = None,
                   to: Optional[int] = None) -> Receipt:
        """Send one frame and resolve with its delivery receipt.

        Receipts are matched FIFO, so enqueueing the pending future and writing
        the frame happen under a lock: concurrent emits from different tasks
        stay in wire order.
        """
        frame: dict = {"type": event_type, "room": room, "payload": payload or {}}
        if to is not None:
            frame["to"] = to
        if self._send_lock is None:
            self._send_lock = asyncio.Lock()
        fut = asyncio.get_running_loop().create_future()
        async with self._send_lock:
            self._pending.append(fut)
            await self._send_raw(frame)
        return await fut

    async def send_text(self, room: str, text: str, to: Optional[int] = None,
                        as_user: Optional[int] = None) -> Receipt:
        payload: dict = {"text": text}
        if as_user is not None:
            payload["as_user"] = as_user
        return await self.emit("text_message", room, payload, to=to)

    async def send_image(self, room: str, url: str) -> Receipt:
        return await self.emit("image_message", room, {"url": url})

    async def send_command(self, room: str, command: str, args: Optional[list[str]] = None) -> Receipt:
        return await self.emit("command", room, {"command": command, "args": args or []})

    async def start_typing(self, room: str) -> Receipt:
        return await self.emit("typing_started", room, {})

    async def stop_typing(self, room: str) -> Receipt:
        return await self.emit("typing_stopped", room, {})

    async def send_keystroke(self, room: str, text_so_far: str) -> Receipt:
        return await self.emit("keystroke", room, {"text_so_far": text_so_far})

    async def send_bounding_box(self, room: str, element_id: str,
                                x0: float, y0: float, x1: float, y1: float) -> Receipt:
        return await self.emit("bounding_box", room,
                               {"element_id": element_id, "x0": x0, "y0": y0, "x1": x1, "y1": y1})

    async def send_mouse(self, room: str, element_id: str, x: float, y: float) -> Receipt:
        return await self.emit("mouse", room, {"element_id": element_id, "x": x, "y": y})

    async def display_update(self, room: str, element_id: str, mutation: str, value,
                             scope="room") -> Receipt:
        return await self.emit("display_update", room,
                               {"element_id": element_id, "mutation": mutation,
                                "value": value, "scope": scope})

    async def issue_code(self, room: str, to: int, code: str, **extra) -> Receipt:
        return await self.emit("code_issued", room, {"code": code, **extra}, to=to)

    async def set_relay_mode(self, room: str, enabled: bool) -> Receipt:
        return await self.emit("set_relay_mode", room, {"enabled": enabled})

    async def claim(self, room: str, key: str) -> Receipt:
        return await self.emit("claim", room, {"key": key})

    async def sync(self, room: str, since_seq: int = 0) -> Receipt:
        return await self.emit("sync", room, {"since_seq": since_seq})

    # --------------------------------------------------------------------- api

    async def api(self, method: str, path: str, body: Optional[dict] = None):
        """Call the REST API with this bot's token; returns the parsed body."""
        http = self._http_client()
        if body is not None and method.upper() in ("POST", "PATCH", "PUT"):
            response = await http.request(method.upper(), path, json=body)
        else:
            response = await http.request(method.upper(), path)
        if response.status_code >= 400:
            try:
                parsed = response.json()
            except json.JSONDecodeError:
                parsed = {"message": response.text}
            raise ApiRequestError(response.status_code, parsed)
        if "ndjson" in response.headers.get("content-type", ""):
            return response.text
        return response.json()

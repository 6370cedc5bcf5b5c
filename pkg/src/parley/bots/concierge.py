"""Concierge bot: watches a waiting room, forms task groups in FIFO arrival
order once a task's quota is met, opens a task room and moves the users there,
and compensates lonely waiters with a code when their timeout expires.

The matchmaking rules live in :class:`ConciergeState`, a plain state machine
driven by explicit timestamps, so they can be tested exhaustively without a
server; :class:`ConciergeBot` is the shell that wires it to the gateway and
the admin API through an injectable clock.
"""

from __future__ import annotations

import hashlib
import hmac
import logging
from dataclasses import dataclass
from typing import Optional

from ..clock import Clock, TimerHandle
from .sdk import ApiRequestError, BotClient

logger = logging.getLogger("parley.concierge")

DEFAULT_TIMEOUT = 300.0  # five minutes


def completion_code(key: str, room_id: str, user_id: int, prefix: str = "") -> str:
    """Deterministic 10-char alphanumeric code from a keyed hash of (room, user)."""
    digest = hmac.new(key.encode(), f"{room_id}:{user_id}".encode(), hashlib.sha256).hexdigest()
    body = "".join(c for c in digest.upper() if c.isalnum())[:10]
    return f"{prefix}{body}" if prefix else body


@dataclass(frozen=True)
class FormGroup:
    task_id: int
    user_ids: tuple[int, ...]


@dataclass(frozen=True)
class TimeoutUser:
    user_id: int
    waited: float


@dataclass(frozen=True)
class RejectUser:
    user_id: int


@dataclass
class _Waiter:
    user_id: int
    arrived: float


class ConciergeState:
    """Per-task FIFO queues with waiting deadlines. Pure; time comes in as arguments."""

    def __init__(self, timeout: float = DEFAULT_TIMEOUT,
                 task_timeouts: Optional[dict[int, float]] = None):
        self.timeout = timeout
        self.task_timeouts = task_timeouts or {}
        self.quotas: dict[int, int] = {}
        self.queues: dict[int, list[_Waiter]] = {}
        self._queued: dict[int, int] = {}  # user_id -> task_id

    def set_quota(self, task_id: int, num_users: int):
        self.quotas[task_id] = num_users

    def timeout_for(self, task_id: int) -> float:
        return self.task_timeouts.get(task_id, self.timeout)

    def on_join(self, user_id: int, task_id: Optional[int], now: float) -> list:
        if task_id is None:
            return [RejectUser(user_id)]
        if user_id in self._queued:
            return []  # already waiting; keep original position
        queue = self.queues.setdefault(task_id, [])
        queue.append(_Waiter(user_id, now))
        self._queued[user_id] = task_id
        return self._form_groups(task_id)

    def on_leave(self, user_id: int) -> None:
        task_id = self._queued.pop(user_id, None)
        if task_id is None:
            return
        queue = self.queues.get(task_id, [])
        self.queues[task_id] = [w for w in queue if w.user_id != user_id]

    def _form_groups(self, task_id: int) -> list:
        quota = self.quotas.get(task_id)
        if quota is None:
            return []
        actions = []
        queue = self.queues.get(task_id, [])
        while len(queue) >= quota:
            group, queue = queue[:quota], queue[quota:]
            self.queues[task_id] = queue
            for waiter in group:
                self._queued.pop(waiter.user_id, None)
            actions.append(FormGroup(task_id, tuple(w.user_id for w in group)))
        return actions

    def due_timeouts(self, now: float) -> list[TimeoutUser]:
        """Pop every waiter whose deadline has passed.

        Ordered by deadline; the sort is stable so simultaneous arrivals keep
        their FIFO queue order.
        """
        due = []
        for task_id, queue in self.queues.items():
            limit = self.timeout_for(task_id)
            for waiter in queue:
                if now - waiter.arrived >= limit:
                    due.append((waiter.arrived + limit, waiter))
        due.sort(key=lambda pair: pair[0])
        for _, waiter in due:
            self.on_leave(waiter.user_id)
        return [TimeoutUser(w.user_id, now - w.arrived) for _, w in due]

    def next_deadline(self) -> Optional[float]:
        deadlines = [
            waiter.arrived + self.timeout_for(task_id)
            for task_id, queue in self.queues.items()
            for waiter in queue
        ]
        return min(deadlines) if deadlines else None

    def waiting(self, task_id: int) -> list[int]:
        return [w.user_id for w in self.queues.get(task_id, [])]


class ConciergeBot:
    """One concierge per waiting room; claims the room so a second instance fails fast."""

    def __init__(self, client: BotClient, waiting_room: str, clock: Optional[Clock] = None,
                 timeout: float = DEFAULT_TIMEOUT,
                 task_timeouts: Optional[dict[int, float]] = None,
                 code_prefix: str = "", code_key: str = "parley-waiting"):
        self.client = client
        self.waiting_room = waiting_room
        self.clock = clock or Clock()
        self.state = ConciergeState(timeout=timeout, task_timeouts=task_timeouts)
        self.code_prefix = code_prefix
        self.code_key = code_key
        self.rooms_created: list[str] = []
        self._timer: Optional[TimerHandle] = None

        client.on("room_state", self._on_room_state)
        client.on("joined", self._on_joined)
        client.on("left", self._on_left)

    async def start(self):
        receipt = await self.client.claim(self.waiting_room, "concierge")
        if not receipt.ok:
            raise RuntimeError(f"waiting room already has a concierge: {receipt.error_message}")

    async def _on_room_state(self, frame):
        if frame.get("room") != self.waiting_room:
            return
        for member in frame["payload"].get("members", ()):
            if member["kind"] == "human" and member.get("connected", True):
                await self._enqueue(member["id"], member.get("task_id"))

    async def _on_joined(self, frame):
        if frame.get("room") != self.waiting_room:
            return
        user = frame["payload"]["user"]
        if user["kind"] != "human":
            return
        await self._enqueue(user["id"], user.get("task_id"))

    async def _on_left(self, frame):
        if frame.get("room") != self.waiting_room:
            return
        user = frame["payload"]["user"]
        self.state.on_leave(user["id"])
        self._reschedule()

    async def _enqueue(self, user_id: int, task_id: Optional[int]):
        if task_id is not None and task_id not in self.state.quotas:
            try:
                task = await self.client.api("GET", f"/api/v1/tasks/{task_id}")
                self.state.set_quota(task_id, task["num_users"])
            except ApiRequestError as e:
                logger.warning("cannot resolve task %s: %s", task_id, e)
                task_id = None
        actions = self.state.on_join(user_id, task_id, self.clock.now())
        await self._execute(actions)
        self._reschedule()

    async def _execute(self, actions):
        for action in actions:
            if isinstance(action, FormGroup):
                await self._form_room(action)
            elif isinstance(action, TimeoutUser):
                await self._compensate(action)
            elif isinstance(action, RejectUser):
                await self.client.send_text(
                    self.waiting_room,
                    "Your login is not assigned to any task, so you cannot be paired. "
                    "Please contact the experimenter.",
                    to=action.user_id,
                )

    async def _form_room(self, action: FormGroup):
        try:
            room = await self.client.api("POST", "/api/v1/rooms", {"task_id": action.task_id})
        except ApiRequestError as e:
            logger.error("could not create task room: %s", e)
            return
        room_id = room["id"]
        self.rooms_created.append(room_id)
        for user_id in action.user_ids:
            try:
                await self.client.api(
                    "POST", f"/api/v1/users/{user_id}/move",
                    {"from_room": self.waiting_room, "to_room": room_id},
                )
            except ApiRequestError as e:
                logger.error("could not move user %s to %s: %s", user_id, room_id, e)
        logger.info("formed room %s for task %s with users %s",
                    room_id, action.task_id, list(action.user_ids))

    async def _compensate(self, action: TimeoutUser):
        code = completion_code(self.code_key, self.waiting_room, action.user_id, self.code_prefix)
        await self.client.send_text(
            self.waiting_room,
            "Sorry, no partner arrived in time. Use this code to claim your "
            f"waiting compensation: {code}",
            to=action.user_id,
        )
        await self.client.issue_code(
            self.waiting_room, action.user_id, code,
            reason="waiting_timeout", waited_seconds=action.waited,
        )

    def _reschedule(self):
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None
        deadline = self.state.next_deadline()
        if deadline is not None:
            self._timer = self.clock.call_at(deadline, self._fire_timeouts)

    async def _fire_timeouts(self):
        actions = self.state.due_timeouts(self.clock.now())
        await self._execute(actions)
        self._reschedule()

"""Injectable time source: real asyncio time in production, virtual time in
tests so five-minute waiting timeouts run in milliseconds and fire at exact,
reproducible instants.
"""

from __future__ import annotations

import asyncio
import heapq
import itertools
from typing import Awaitable, Callable, Optional

AsyncCallback = Callable[[], Awaitable[None]]


class TimerHandle:
    def __init__(self):
        self.cancelled = False
        self._real_handle = None

    def cancel(self):
        self.cancelled = True
        if self._real_handle is not None:
            self._real_handle.cancel()


class Clock:
    """Real time, driven by the running event loop."""

    def now(self) -> float:
        return asyncio.get_running_loop().time()

    async def sleep(self, seconds: float):
        await asyncio.sleep(seconds)

    def call_at(self, when: float, callback: AsyncCallback) -> TimerHandle:
        loop = asyncio.get_running_loop()
        handle = TimerHandle()

        def fire():
            if not handle.cancelled:
                loop.create_task(callback())

        handle._real_handle = loop.call_at(when, fire)
        return handle


class VirtualClock(Clock):
    """Deterministic time for tests: nothing fires until ``advance`` is called,
    and due callbacks run to completion, in timestamp order, inside ``advance``.
    """

    def __init__(self, start: float = 0.0):
        self._now = start
        self._timers: list = []
        self._counter = itertools.count()

    def now(self) -> float:
        return self._now

    def call_at(self, when: float, callback: AsyncCallback) -> TimerHandle:
        handle = TimerHandle()
        heapq.heappush(self._timers, (when, next(self._counter), callback, handle))
        return handle

    async def sleep(self, seconds: float):
        event = asyncio.Event()

        async def waker():
            event.set()

        self.call_at(self._now + seconds, waker)
        await event.wait()

    async def advance(self, dt: float):
        await self.advance_to(self._now + dt)

    async def advance_to(self, when: float):
        while self._timers and self._timers[0][0] <= when:
            fire_at, _, callback, handle = heapq.heappop(self._timers)
            self._now = max(self._now, fire_at)
            if not handle.cancelled:
                await callback()
        self._now = max(self._now, when)

    def pending(self) -> Optional[float]:
        live = [t for t in self._timers if not t[3].cancelled]
        return min(t[0] for t in live) if live else None

"""Deterministic discrete-event engine.

One global virtual clock, a binary heap of pending events ordered by
``(fire_time, seq)``, and seeded per-node random streams.
"""
from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, TextIO

# slack for float boundary arithmetic in next_multiple
_EPS = 1e-9


class SchedulingError(RuntimeError):
    """An event was scheduled in the past or a handler misbehaved."""


@dataclass(order=True)
class Event:
    fire_time: float
    seq: int
    kind: str = field(compare=False)
    target: Any = field(compare=False, default=None)
    payload: Any = field(compare=False, default=None)
    handler: Optional[Callable[["Event"], None]] = field(compare=False, default=None, repr=False)
    cancelled: bool = field(compare=False, default=False)


class EventHandle:
    __slots__ = ("_event",)

    def __init__(self, event: Event):
        self._event = event

    @property
    def fire_time(self) -> float:
        return self._event.fire_time

    @property
    def active(self) -> bool:
        return not self._event.cancelled

    def cancel(self) -> None:
        self._event.cancelled = True


def next_multiple(t_interval: float, now: float) -> float:
    """Smallest ``k * t_interval`` strictly greater than *now* (k >= 1)."""
    if t_interval <= 0:
        raise ValueError(f"interval must be positive, got {t_interval}")
    k = max(1, math.floor(now / t_interval + _EPS) + 1)
    return k * t_interval


def rng_stream(seed: int, *key: Any) -> random.Random:
    """Independent, platform-stable stream for ``(seed, *key)``.

    String seeds are hashed with SHA-512 by :class:`random.Random`, so
    adding a node never perturbs another node's draws.
    """
    return random.Random("/".join(str(k) for k in (seed,) + key))


class Simulator:
    """Single-threaded event loop.

    Handlers receive the dispatched :class:`Event`; they may schedule
    further events at or after ``now``.
    """

    def __init__(self, start: float = 0.0, log: Optional[TextIO] = None):
        self.now = float(start)
        self._queue: list[Event] = []
        self._seq = 0
        self.dispatched = 0
        self.log = log

    def schedule(
        self,
        fire_time: float,
        kind: str,
        handler: Callable[[Event], None],
        target: Any = None,
        payload: Any = None,
    ) -> EventHandle:
        if fire_time < self.now:
            raise SchedulingError(
                f"event {kind!r} for {target!r} at {fire_time} is before now={self.now}"
            )
        ev = Event(float(fire_time), self._seq, kind, target, payload, handler)
        self._seq += 1
        heapq.heappush(self._queue, ev)
        return EventHandle(ev)

    def schedule_in(self, delay: float, kind: str, handler, target=None, payload=None) -> EventHandle:
        return self.schedule(self.now + delay, kind, handler, target, payload)

    def pending(self) -> int:
        return sum(1 for ev in self._queue if not ev.cancelled)

    def peek_time(self) -> Optional[float]:
        while self._queue and self._queue[0].cancelled:
            heapq.heappop(self._queue)
        return self._queue[0].fire_time if self._queue else None

    def run_until(self, t_end: float) -> int:
        """Dispatch every event with ``fire_time <= t_end``; return the count."""
        if t_end < self.now:
            raise SchedulingError(f"t_end={t_end} is before now={self.now}")
        count = 0
        queue = self._queue
        while queue and queue[0].fire_time <= t_end:
            ev = heapq.heappop(queue)
            if ev.cancelled:
                continue
            self.now = ev.fire_time
            if self.log is not None:
                self.log.write(f"{ev.fire_time:.6f} {ev.kind} {ev.target} {_detail(ev.payload)}\n")
            if ev.handler is not None:
                ev.handler(ev)
            count += 1
        self.now = float(t_end)
        self.dispatched += count
        return count


def _detail(payload: Any) -> str:
    if payload is None:
        return "-"
    describe = getattr(payload, "describe", None)
    if describe is not None:
        return describe()
    return str(payload).replace("\n", " ")

"""Single-threaded discrete-event loop with a logical millisecond clock."""

from __future__ import annotations

import heapq
import itertools
from typing import Callable

# Events at the same instant run in (priority, insertion) order; LATE runs
# after every NORMAL event of that instant.
NORMAL = 0
LATE = 1


class Simulation:
    def __init__(self, start: int = 0):
        self.now = start
        self._queue: list = []
        self._seq = itertools.count()
        self.processed = 0

    def schedule(self, delay: int, fn: Callable, *args, priority: int = NORMAL) -> None:
        if delay < 0:
            raise ValueError("cannot schedule into the past")
        heapq.heappush(self._queue, (self.now + int(delay), priority, next(self._seq), fn, args))

    def at(self, time: int, fn: Callable, *args, priority: int = NORMAL) -> None:
        self.schedule(max(0, int(time) - self.now), fn, *args, priority=priority)

    def pending(self) -> int:
        return len(self._queue)

    def step(self) -> bool:
        if not self._queue:
            return False
        time, _, _, fn, args = heapq.heappop(self._queue)
        self.now = time
        fn(*args)
        self.processed += 1
        return True

    def run(self, until: int | None = None, stop: Callable[[], bool] | None = None) -> None:
        """Drain events, optionally up to a logical time or a stop predicate."""
        while self._queue:
            if until is not None and self._queue[0][0] > until:
                self.now = until
                return
            self.step()
            if stop is not None and stop():
                return
        if until is not None and until > self.now:
            self.now = until


class Resource:
    """A serial processor: work queues behind whatever it is already doing."""

    def __init__(self, sim: Simulation):
        self.sim = sim
        self.busy_until = 0

    def submit(self, cost: int, fn: Callable, *args) -> int:
        start = max(self.sim.now, self.busy_until)
        self.busy_until = start + int(cost)
        self.sim.at(self.busy_until, fn, *args)
        return self.busy_until

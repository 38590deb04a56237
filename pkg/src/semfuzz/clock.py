from __future__ import annotations

import time


class WallClock:
    """Monotonic nanoseconds since construction."""

    deterministic = False

    def __init__(self) -> None:
        self._start = time.monotonic_ns()

    def now(self) -> int:
        return time.monotonic_ns() - self._start

    def advance(self, ns: int) -> None:
        pass

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class SimClock:
    """Simulated time that only moves when told to.

    The campaign advances it by a fixed cost per execution, so budgets and
    timestamps are reproducible run to run.
    """

    deterministic = True
    EXEC_COST_NS = 100_000

    def __init__(self) -> None:
        self._now = 0

    def now(self) -> int:
        return self._now

    def advance(self, ns: int) -> None:
        self._now += int(ns)

    def sleep(self, seconds: float) -> None:
        self._now += int(seconds * 1e9)

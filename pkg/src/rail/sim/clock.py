"""Virtual clock and deterministic event scheduler.

Time is an integer tick count at a rate chosen so every configured
frequency divides it exactly; cadence arithmetic never drifts. Events at
the same tick run in (priority, insertion order), which pins the
eye -> deliveries -> hand ordering within a tick.
"""

from __future__ import annotations

import heapq
import math

PRIO_EYE = 0
PRIO_DELIVER = 1
PRIO_REQUEST = 2  # after deliveries so an issued request sees same-tick frames
PRIO_HAND = 3


class VirtualScheduler:
    def __init__(self, tick_rate: int):
        if tick_rate <= 0:
            raise ValueError(f"tick rate must be positive, got {tick_rate}")
        self.tick_rate = int(tick_rate)
        self.now_tick = 0
        self._heap: list[tuple[int, int, int, object]] = []
        self._seq = 0

    def seconds(self, tick: int) -> float:
        return tick / self.tick_rate

    def delay_ticks(self, seconds: float) -> int:
        """Quantize a non-negative delay up to whole ticks (exact values stay exact)."""
        if seconds <= 0:
            return 0
        return max(0, math.ceil(seconds * self.tick_rate - 1e-9))

    def schedule(self, tick: int, priority: int, fn) -> None:
        if tick < self.now_tick:
            raise ValueError(f"cannot schedule in the past: {tick} < {self.now_tick}")
        heapq.heappush(self._heap, (tick, priority, self._seq, fn))
        self._seq += 1

    def schedule_after(self, delay_seconds: float, priority: int, fn) -> None:
        self.schedule(self.now_tick + self.delay_ticks(delay_seconds), priority, fn)

    def run_until(self, end_tick: int) -> None:
        """Process every event with tick <= end_tick in deterministic order."""
        while self._heap and self._heap[0][0] <= end_tick:
            tick, _prio, _seq, fn = heapq.heappop(self._heap)
            self.now_tick = tick
            fn()
        self.now_tick = end_tick

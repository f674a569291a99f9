"""Deterministic discrete-event kernel.

A thin layer over ``simpy.Environment``: simpy orders its queue by
(time, priority, insertion id), so callbacks scheduled through here fire in
(fire_time, sequence) order. The kernel adds the sequence numbers, event
cancellation, and ``run_until`` semantics that include events landing exactly
on the horizon.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import simpy

from errors import NegativeDelay, SimulationError

logger = logging.getLogger(__name__)


@dataclass
class Event:
    fire_time: float
    sequence: int
    payload: Callable[..., Any]
    args: tuple = field(default=())
    cancelled: bool = False
    fired: bool = False


@dataclass(frozen=True)
class RunStats:
    events_fired: int
    final_time: float


class Kernel:
    def __init__(self) -> None:
        self._env = simpy.Environment()
        self._sequence = itertools.count()
        self._fired = 0

    def now(self) -> float:
        return float(self._env.now)

    @property
    def events_fired(self) -> int:
        return self._fired

    def schedule(self, delay: float, payload: Callable[..., Any], *args: Any) -> Event:
        if delay < 0:
            raise NegativeDelay(f"cannot schedule {delay} s into the past")
        event = Event(self.now() + delay, next(self._sequence), payload, args)
        timeout = self._env.timeout(delay)
        timeout.callbacks.append(lambda _t, ev=event: self._fire(ev))
        return event

    def schedule_at(self, fire_time: float, payload: Callable[..., Any], *args: Any) -> Event:
        return self.schedule(fire_time - self.now(), payload, *args)

    def cancel(self, event: Event | None) -> None:
        if event is not None:
            event.cancelled = True

    def pending(self) -> bool:
        return self._env.peek() != math.inf

    def run_until(self, t_end: float) -> RunStats:
        if t_end < self.now():
            raise SimulationError(f"run_until({t_end}) is before now ({self.now()})")
        fired_before = self._fired
        while True:
            next_time = self._env.peek()
            if next_time == math.inf or next_time > t_end:
                break
            self._env.step()
        if math.isfinite(t_end) and t_end > self._env.now:
            # advances the clock to the horizon; nothing else is due before it
            self._env.run(until=t_end)
        stats = RunStats(self._fired - fired_before, self.now())
        logger.debug("run_until %.3f fired %d events", t_end, stats.events_fired)
        return stats

    def run(self) -> RunStats:
        """Run until the queue is empty."""
        return self.run_until(math.inf)

    def _fire(self, event: Event) -> None:
        if event.cancelled:
            return
        event.fired = True
        self._fired += 1
        event.payload(*event.args)

"""Discrete-event scheduler on a virtual millisecond clock.

Tasks are generators that ``yield`` how many virtual ms to sleep. Events at
the same instant run by (priority, name) in deterministic mode, so the
controller (priority 0) goes first and nodes follow in node-id order. In
non-deterministic mode ties are broken by a freshly seeded random key.
"""

from __future__ import annotations

import heapq
import secrets
from dataclasses import dataclass, field
from typing import Any, Callable, Generator, Optional

from ..errors import InvalidValue
from ..rng import Stream

TaskGen = Generator[int, None, Any]


@dataclass
class Task:
    name: str
    gen: TaskGen
    priority: int = 1
    done: bool = False
    result: Any = None


@dataclass
class PollStats:
    """Counts node polls; ``max_outstanding`` is the most polls landing on one instant."""

    total: int = 0
    per_node: dict[str, int] = field(default_factory=dict)
    max_outstanding: int = 0
    _instant: int = -1
    _current: int = 0

    def record(self, node: str, now: int) -> None:
        self.total += 1
        self.per_node[node] = self.per_node.get(node, 0) + 1
        if now == self._instant:
            self._current += 1
        else:
            self._instant, self._current = now, 1
        self.max_outstanding = max(self.max_outstanding, self._current)


class Scheduler:
    def __init__(self, *, deterministic: bool = True, entropy: Optional[int] = None):
        self.deterministic = deterministic
        self.now = 0
        self.steps = 0
        self._heap: list[tuple] = []
        self._seq = 0
        self.before_step: Optional[Callable[[], None]] = None
        if not deterministic:
            self._tiebreak = Stream(entropy if entropy is not None else secrets.randbits(63), "schedule")
        else:
            self._tiebreak = None

    def clock(self) -> int:
        return self.now

    def _push(self, when: int, task: Task) -> None:
        self._seq += 1
        tie = task.name if self._tiebreak is None else self._tiebreak.next_u64()
        heapq.heappush(self._heap, (when, task.priority, tie, self._seq, task))

    def spawn(self, gen: TaskGen, *, name: str, priority: int = 1, delay: int = 0) -> Task:
        if delay < 0:
            raise InvalidValue("delay", "must be >= 0")
        task = Task(name, gen, priority)
        self._push(self.now + delay, task)
        return task

    def step(self) -> bool:
        if not self._heap:
            return False
        when, _, _, _, task = heapq.heappop(self._heap)
        self.now = when
        self.steps += 1
        if self.before_step is not None:
            self.before_step()
        try:
            delay = next(task.gen)
        except StopIteration as stop:
            task.done = True
            task.result = stop.value
            return True
        if delay is None or delay < 0:
            raise InvalidValue("yield", f"task {task.name!r} yielded an invalid delay {delay!r}")
        self._push(self.now + int(delay), task)
        return True

    def run(self, *, until: Optional[Callable[[], bool]] = None, max_time: Optional[int] = None) -> None:
        """Run until ``until()`` is true, no tasks remain, or virtual time passes ``max_time``."""
        while self._heap:
            if until is not None and until():
                return
            if max_time is not None and self._heap[0][0] > max_time:
                raise RuntimeError(f"virtual time limit of {max_time} ms exceeded")
            self.step()

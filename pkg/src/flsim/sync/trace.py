"""Totally ordered event log of a run, used for discipline checks and determinism."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Callable


@dataclass(frozen=True)
class TraceEvent:
    time: int
    actor: str
    event: str
    round: int
    phase: int
    detail: tuple = ()

    def to_line(self) -> str:
        doc = {
            "t": self.time,
            "actor": self.actor,
            "event": self.event,
            "round": self.round,
            "phase": self.phase,
            "detail": dict(self.detail),
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))


class Trace:
    """Records events stamped with the virtual time and the controller's true phase.

    The phase stamp comes from the controller's state, not from what the node
    believes, so phase-discipline checks over the trace are meaningful.
    """

    def __init__(self, clock: Callable[[], int], phase: Callable[[], int]):
        self._clock = clock
        self._phase = phase
        self.events: list[TraceEvent] = []

    def record(self, actor: str, event: str, rnd: int, **detail) -> None:
        self.events.append(
            TraceEvent(self._clock(), actor, event, rnd, self._phase(), tuple(sorted(detail.items())))
        )

    def select(self, event: str) -> list[TraceEvent]:
        return [e for e in self.events if e.event == event]

    def lines(self) -> list[str]:
        return [e.to_line() for e in self.events]

    def digest(self) -> str:
        h = hashlib.sha256()
        for line in self.lines():
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

"""The controller's view of the experiment: process phase, node stages, round counter."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from ..errors import IllegalTransition, InvalidValue

PHASE_NAMES = {
    0: "System Initializing",
    1: "In Local Learning",
    2: "In Model Aggergation",
}
CLIENT_STAGE_NAMES = {
    0: "Nodes not Ready",
    1: "Nodes Ready for Job",
    2: "Nodes Ready with Dataset",
    3: "Clients busy in Training",
    4: "Clients Waiting for Next Round",
}
WORKER_STAGE_NAMES = {
    0: "Nodes not Ready",
    1: "Nodes Ready for Job",
    2: "Nodes Ready with Dataset",
    3: "Workers busy in Aggregation",
    4: "Aggregation Complete",
}
ROLES = ("client", "worker")


@dataclass
class StageRecord:
    stage: int = 0
    round: int = 0


class SyncState:
    """Phase/stage bookkeeping for every (node, role) pair.

    A node that is both client and worker has two independent stage records.
    Stages only move forward within a round. Moving to a later round is
    allowed only into stage 2 ("Nodes Ready with Dataset") from stage 2 or
    later, which is the reset every node performs at a round boundary.
    """

    def __init__(self, clients: Iterable[str], workers: Iterable[str], total_rounds: int):
        if total_rounds < 1:
            raise InvalidValue("strategy.total_rounds", "must be ≥ 1")
        self.total_rounds = total_rounds
        self.process_phase = 0
        self.global_round = 1
        self.download_job_config = False
        self.download_dataset = False
        self.finished = False
        self.global_param_ref = ""
        self.clients = sorted(clients)
        self.workers = sorted(workers)
        self.stages: dict[tuple[str, str], StageRecord] = {}
        for n in self.clients:
            self.stages[(n, "client")] = StageRecord()
        for n in self.workers:
            self.stages[(n, "worker")] = StageRecord()

    @property
    def node_stage(self) -> dict[str, int]:
        """node id -> stage; for dual-role nodes the lower of the two stages."""
        out: dict[str, int] = {}
        for (node, _), rec in sorted(self.stages.items()):
            out[node] = min(out.get(node, 4), rec.stage)
        return out

    def stage(self, node: str, role: str) -> StageRecord:
        return self.stages[(node, role)]

    def update_node_status(self, node: str, stage: int, *, role: str = "client", rnd: int = 0) -> None:
        key = (node, role)
        if key not in self.stages:
            raise InvalidValue("node", f"{node!r} has no {role} role")
        rec = self.stages[key]
        if not 0 <= stage <= 4:
            raise IllegalTransition(node, rec.stage, stage)
        if rnd < rec.round:
            raise IllegalTransition(node, rec.stage, stage)
        if rnd > rec.round:
            # round boundary: only the reset into stage 2 is legal
            if stage != 2 or rec.stage < 2:
                raise IllegalTransition(node, rec.stage, stage)
        elif stage <= rec.stage:
            raise IllegalTransition(node, rec.stage, stage)
        rec.stage = stage
        rec.round = rnd

    def reached(self, node: str, role: str, target: int, rnd: Optional[int] = None) -> bool:
        rec = self.stages[(node, role)]
        want = self.global_round if rnd is None else rnd
        return rec.round == want and rec.stage >= target

    def members(self, role: str) -> list[str]:
        if role == "client":
            return list(self.clients)
        if role == "worker":
            return list(self.workers)
        raise InvalidValue("role", f"unknown role {role!r}")

    def phase_record(self) -> dict:
        return {
            "phase": self.process_phase,
            "round": self.global_round,
            "download_job_config": self.download_job_config,
            "download_dataset": self.download_dataset,
            "finished": self.finished,
        }


class WaitOutcome(enum.Enum):
    ALL_REACHED = "AllReached"
    TIMED_OUT_WITH_QUORUM = "TimedOutWithQuorum"
    TIMED_OUT_EMPTY = "TimedOutEmpty"


@dataclass(frozen=True)
class WaitSpec:
    """Wait until every live member of ``roles`` reaches ``target`` or ``timeout_ms`` passes.

    ``min_results`` decides between the two timeout outcomes; by default at
    least one member must have reached the target.
    """

    target: int
    roles: tuple[str, ...] = ("client",)
    timeout_ms: int = 30_000
    rnd: int = 0
    min_results: Optional[Callable[[], bool]] = field(default=None, compare=False)
    label: str = ""

    def __post_init__(self):
        if not self.timeout_ms > 0:
            raise InvalidValue("timeout_ms", "must be > 0")
        if not 0 <= self.target <= 4:
            raise InvalidValue("target", "stage must be in 0..4")

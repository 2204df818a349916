"""Round synchronization: controller state machine, node tasks and the virtual-clock scheduler."""

from .controller import Controller, RoundResult
from .experiment import (
    Experiment,
    ExperimentReport,
    RoundRecord,
    RunOptions,
    build_experiment,
    execute,
    run_experiment,
    worker_sources,
)
from .node import NodeRuntime, node_poll_loop
from .scheduler import PollStats, Scheduler
from .state import (
    CLIENT_STAGE_NAMES,
    PHASE_NAMES,
    WORKER_STAGE_NAMES,
    SyncState,
    WaitOutcome,
    WaitSpec,
)
from .trace import Trace, TraceEvent

__all__ = [
    "CLIENT_STAGE_NAMES",
    "Controller",
    "Experiment",
    "ExperimentReport",
    "NodeRuntime",
    "PHASE_NAMES",
    "PollStats",
    "RoundRecord",
    "RoundResult",
    "RunOptions",
    "Scheduler",
    "SyncState",
    "Trace",
    "TraceEvent",
    "WORKER_STAGE_NAMES",
    "WaitOutcome",
    "WaitSpec",
    "build_experiment",
    "execute",
    "node_poll_loop",
    "run_experiment",
    "worker_sources",
]

"""Node tasks: poll the controller's phase record and act on it.

A node only ever talks to the rest of the system through the bus. Each poll
reads the last-value ``control/phase`` record (a free local read) and moves
each of the node's roles at most one stage forward.
"""

from __future__ import annotations

import json
from typing import Callable, Optional

from .. import agents
from ..agents import ClientAgent, WorkerAgent
from ..bus import CONSENSUS_BALLOTS, CONTROL_PHASE, GLOBAL_PARAMS, Bus, Message, client_params_topic, control_stage_topic
from ..errors import InvalidValue
from ..jobconfig import FaultSpec
from ..partition import ChunkArchive
from .scheduler import PollStats
from .state import StageRecord
from .trace import Trace

PHASE_KEY = "state"


class NodeRuntime:
    def __init__(
        self,
        node_id: str,
        bus: Bus,
        trace: Trace,
        *,
        client: Optional[ClientAgent] = None,
        worker: Optional[WorkerAgent] = None,
        archive: Optional[ChunkArchive] = None,
        train_fraction: float = 0.8,
        fault: Optional[FaultSpec] = None,
        sources: tuple[str, ...] = (),
    ):
        if client is None and worker is None:
            raise InvalidValue("node", f"{node_id!r} has no role")
        self.node_id = node_id
        self.bus = bus
        self.trace = trace
        self.client = client
        self.worker = worker
        self.archive = archive
        self.train_fraction = train_fraction
        self.fault = fault
        # clients whose parameters this node's worker role listens to
        self.sources = tuple(sorted(sources))
        self.roles = tuple(r for r, a in (("client", client), ("worker", worker)) if a is not None)
        self.rec = {r: StageRecord() for r in self.roles}
        self.alive = True
        self._pending_updates: list = []
        self._dataset_loaded = False

    def attach(self) -> None:
        self.bus.subscribe(GLOBAL_PARAMS, self.node_id, self._on_global)
        if self.worker is not None:
            for c in self.sources:
                self.bus.subscribe(client_params_topic(c), self.node_id)
            self.bus.subscribe(CONSENSUS_BALLOTS, self.node_id)

    def _on_global(self, msg: Message) -> None:
        if not self.alive:
            return
        b = agents.decode_bundle(msg.payload)
        rnd = int(b.meta["round"])
        if self.client is not None:
            self.client.install_global(b.params, b.extra, rnd)
        if self.worker is not None:
            self.worker.install_global(b.params, b.extra, rnd)

    def _report(self, role: str, stage: int, rnd: int, **extra) -> None:
        rec = self.rec[role]
        rec.stage, rec.round = stage, rnd
        doc = {"node": self.node_id, "role": role, "stage": stage, "round": rnd, **extra}
        payload = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        self.bus.publish(control_stage_topic(self.node_id), role, payload, self.node_id)
        self.trace.record(self.node_id, "stage", rnd, role=role, stage=stage)

    def _crash_due(self, ph: dict) -> bool:
        f = self.fault
        if f is None or f.kind != "crash":
            return False
        if f.round == 0:
            return True
        return ph["phase"] > 0 and (ph["round"], ph["phase"]) >= (f.round, f.phase)

    def crash(self) -> None:
        self.alive = False
        for agent in (self.client, self.worker):
            if agent is not None:
                agent.alive = False
        self.trace.record(self.node_id, "crash", 0)

    def poll(self) -> bool:
        """One observation of the control state; returns False once the node is done."""
        if not self.alive:
            return False
        raw = self.bus.get(CONTROL_PHASE, PHASE_KEY)
        if raw is None:
            return True
        ph = json.loads(raw)
        if ph["finished"]:
            return False
        if self._crash_due(ph):
            self.crash()
            return False
        for role in self.roles:
            self._step(role, ph)
        return True

    def _load_dataset(self) -> None:
        if self._dataset_loaded:
            return
        self._dataset_loaded = True
        if self.client is not None and self.archive is not None:
            chunk = self.archive.download(self.node_id)
            self.client.load_chunk(chunk, self.train_fraction)
            self.trace.record(self.node_id, "dataset", 0, n_samples=chunk.n_samples)

    def _step(self, role: str, ph: dict) -> None:
        rec = self.rec[role]
        phase, rnd = ph["phase"], ph["round"]
        if phase == 0:
            if rec.stage == 0 and ph["download_job_config"]:
                self._report(role, 1, 0)
            elif rec.stage == 1 and ph["download_dataset"]:
                self._load_dataset()
                self._report(role, 2, 0)
            return
        if rec.stage < 2:
            return  # never finished initialization; sits the experiment out
        if rnd > rec.round:
            self._report(role, 2, rnd)
        if rec.round != rnd:
            return
        if role == "client" and phase == 1:
            self._client_step(rec, rnd)
        elif role == "worker" and phase == 2:
            self._worker_step(rec, rnd)

    def _client_step(self, rec: StageRecord, rnd: int) -> None:
        c = self.client
        if rec.stage == 2:
            # After an aborted round the previous global stays current.
            if c.global_params is not None and c.global_round <= rnd:
                self.trace.record(self.node_id, "download-global", rnd, source_round=c.global_round)
                self._report("client", 3, rnd)
        elif rec.stage == 3:
            update = c.local_round(rnd)
            self.trace.record(self.node_id, "train", rnd, n_samples=update.n_samples)
            digest = agents.publish_client_update(self.bus, update, rnd)
            m = c.evaluate_local()
            metrics = None if m is None else {"accuracy": m.accuracy, "loss": m.loss}
            self._report("client", 4, rnd, digest=digest, n_samples=update.n_samples, metrics=metrics)

    def _worker_step(self, rec: StageRecord, rnd: int) -> None:
        w = self.worker
        if rec.stage == 2:
            self._pending_updates = agents.collect_client_updates(self.bus.drain(self.node_id), rnd)
            self.trace.record(self.node_id, "download-client-params", rnd, count=len(self._pending_updates))
            self._report("worker", 3, rnd)
        elif rec.stage == 3:
            state = w.aggregate(self._pending_updates)
            self.trace.record(self.node_id, "aggregate", rnd, count=len(self._pending_updates))
            self._pending_updates = []
            if state is None:
                self._report("worker", 4, rnd, has_aggregate=False)
                return
            ballot = agents.publish_aggregate(self.bus, w, rnd)
            self._report("worker", 4, rnd, has_aggregate=True, digest=ballot.digest)


def node_poll_loop(
    node: NodeRuntime,
    interval_ms: int,
    *,
    stats: Optional[PollStats] = None,
    clock: Optional[Callable[[], int]] = None,
):
    """Task that sleeps ``interval_ms`` then polls, until the node is done.

    The interval is validated here, before the task is scheduled.
    """
    if isinstance(interval_ms, bool) or not isinstance(interval_ms, int) or interval_ms <= 0:
        raise InvalidValue("poll_interval_ms", "must be a positive integer")

    def loop():
        while True:
            yield interval_ms
            if stats is not None:
                stats.record(node.node_id, clock() if clock is not None else 0)
            if not node.poll():
                return

    return loop()

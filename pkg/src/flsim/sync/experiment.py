"""Wire every module together and run one experiment on the virtual clock."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import numpy as np

from .. import agents
from ..agents import ClientAgent, WorkerAgent
from ..bus import Bus
from ..consensus import malicious_worker_wrapper
from ..jobconfig import JobConfig, job_digest, resolve_roles
from ..modelcore import ModelSpec, TrainConfig, evaluate, init_params
from ..partition import ChunkArchive, Dataset, distribute_into_chunks, prepare_root_dataset
from ..rng import derive_seed
from ..strategy import StrategyConfig, lookup_strategy
from .controller import Controller, RoundResult
from .node import NodeRuntime, node_poll_loop
from .scheduler import PollStats, Scheduler
from .state import SyncState
from .trace import Trace


@dataclass
class RoundRecord:
    round: int
    accuracy: float
    loss: float
    elapsed_ms: int
    bytes_sent: int
    bytes_received: int
    global_digest: str
    winner: str
    n_updates: int
    ballots: dict[str, str] = field(default_factory=dict)
    client_metrics: dict[str, Any] = field(default_factory=dict)
    waits: list[str] = field(default_factory=list)
    clients_agree: bool = True
    holders: int = 0


@dataclass
class ExperimentReport:
    job_digest: str
    seed: int
    deterministic: bool
    total_rounds: int
    rounds: list[RoundRecord]
    aborted_rounds: list[tuple[int, str]]
    final_global_digest: str
    ledger_summary: dict
    bytes_sent: int
    bytes_received: int
    polls: dict
    trace_digest: str
    virtual_ms: int
    # Wall-clock timing is environment dependent and kept out of to_dict().
    wall_seconds: float = 0.0

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc.pop("wall_seconds")
        doc["aborted_rounds"] = [list(a) for a in self.aborted_rounds]
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


@dataclass
class RunOptions:
    seed: int = 0
    deterministic: bool = True
    ledger: Any = None
    # tie-break entropy for non-deterministic scheduling; random when None
    entropy: Optional[int] = None
    max_virtual_ms: Optional[int] = None


@dataclass
class Experiment:
    """Live objects of a run, kept around for inspection after :meth:`run`."""

    cfg: JobConfig
    options: RunOptions
    root: Dataset
    archive: ChunkArchive
    bus: Bus
    scheduler: Scheduler
    state: SyncState
    controller: Controller
    trace: Trace
    nodes: dict[str, NodeRuntime]
    clients: dict[str, ClientAgent]
    workers: dict[str, WorkerAgent]
    poll_stats: PollStats
    records: list[RoundRecord] = field(default_factory=list)
    aborted: list[tuple[int, str]] = field(default_factory=list)
    report: Optional[ExperimentReport] = None


def worker_sources(cfg: JobConfig) -> dict[str, tuple[str, ...]]:
    """Which clients each worker listens to under the configured topology."""
    clients, workers = cfg.clients(), cfg.workers()
    topo = cfg.topology
    if topo.kind == "client-server":
        return {w: tuple(clients) for w in workers}
    if topo.kind == "hierarchical":
        out = {}
        client_set = set(clients)
        for cluster in topo.clusters:
            members = tuple(sorted(n for n in cluster.nodes if n in client_set))
            for n in cluster.nodes:
                if n in workers:
                    out[n] = members
        return out
    # decentralized: each node hears itself and its peers (everyone when unspecified)
    out = {}
    for w in workers:
        if w in topo.peers:
            out[w] = tuple(sorted({w, *topo.peers[w]} & set(clients)))
        else:
            out[w] = tuple(clients)
    return out


def _global_test_set(clients: dict[str, ClientAgent], root: Dataset) -> Dataset:
    parts = [c.test_set for _, c in sorted(clients.items()) if c.test_set is not None and c.test_set.n_samples]
    if not parts:
        return root
    return Dataset(
        np.concatenate([p.features for p in parts]),
        np.concatenate([p.labels for p in parts]),
        root.n_classes,
    )


def build_experiment(cfg: JobConfig, options: RunOptions | None = None) -> Experiment:
    options = options or RunOptions()
    seed = options.seed
    resolved = resolve_roles(cfg)
    client_ids, worker_ids = cfg.clients(), cfg.workers()

    root = prepare_root_dataset(cfg.dataset, seed)
    manifest = distribute_into_chunks(
        cfg.dataset.partitioner, root, client_ids, cfg.dataset.partitioner_params, seed
    )
    archive = ChunkArchive(root, manifest)

    s = cfg.strategy
    strategy = lookup_strategy(s.name)(
        StrategyConfig(
            beta=s.aggregation.beta,
            server_lr=s.aggregation.server_lr,
            local_steps=s.train.local_steps,
            uniform_weighting=s.aggregation.uniform_weighting,
        )
    )
    train_cfg = TrainConfig(
        learning_rate=s.train.learning_rate,
        batch_size=s.train.batch_size,
        local_epochs=s.train.local_epochs,
        max_steps=s.train.local_steps,
    )
    model = ModelSpec(s.model.kind, root.n_features, root.n_classes, s.model.hidden_dims, seed)
    params0 = init_params(model)

    scheduler = Scheduler(deterministic=options.deterministic, entropy=options.entropy)
    bus = Bus(synchronous=options.deterministic, clock=scheduler.clock)
    if not options.deterministic:
        scheduler.before_step = bus.flush
    agents.register_topics(bus, client_ids, worker_ids)
    state = SyncState(client_ids, worker_ids, s.total_rounds)
    trace = Trace(scheduler.clock, lambda: state.process_phase)

    sources = worker_sources(cfg)
    clients: dict[str, ClientAgent] = {}
    workers: dict[str, WorkerAgent] = {}
    nodes: dict[str, NodeRuntime] = {}
    for node_id, rn in resolved.items():
        client = worker = None
        if rn.role in ("client", "client+worker"):
            client = ClientAgent(node_id, strategy, train_cfg, seed)
            clients[node_id] = client
        if rn.role in ("worker", "client+worker"):
            fn = None
            if rn.fault is not None and rn.fault.kind == "malicious":
                fn = malicious_worker_wrapper(
                    strategy.aggregate, rn.fault.mode,
                    seed=derive_seed(seed, "poison", node_id), scale=rn.fault.scale,
                )
            worker = WorkerAgent(node_id, strategy, max(1, len(sources[node_id])), fn)
            workers[node_id] = worker
        nodes[node_id] = NodeRuntime(
            node_id, bus, trace,
            client=client, worker=worker, archive=archive,
            train_fraction=cfg.dataset.train_fraction, fault=rn.fault,
            sources=sources.get(node_id, ()),
        )

    node_timeout = max(rn.config.timeout_ms for rn in resolved.values())
    tick = min(rn.config.poll_interval_ms for rn in resolved.values())
    controller = Controller(
        state=state, bus=bus, clock=scheduler.clock, trace=trace,
        initial_params=params0, initial_extra=strategy.broadcast_extra(strategy.init_state(params0)),
        node_timeout_ms=node_timeout,
        consensus_timeout_ms=int(round(cfg.consensus.timeout_s * 1000)),
        tick_ms=tick,
        consensus_name=cfg.consensus.name,
        hyperparams=cfg.consensus.hyperparams,
        ledger=options.ledger,
        delegate_to_ledger=cfg.consensus.backend == "ledger",
    )
    poll_stats = PollStats()
    exp = Experiment(
        cfg, options, root, archive, bus, scheduler, state, controller, trace,
        nodes, clients, workers, poll_stats,
    )
    for node_id, node in nodes.items():
        node.attach()
        loop = node_poll_loop(node, resolved[node_id].config.poll_interval_ms,
                              stats=poll_stats, clock=scheduler.clock)
        scheduler.spawn(loop, name=node_id, priority=1)
    return exp


def _round_budget(cfg: JobConfig) -> int:
    resolved = resolve_roles(cfg)
    timeout = max(rn.config.timeout_ms for rn in resolved.values())
    poll = max(rn.config.poll_interval_ms for rn in resolved.values())
    per_round = 3 * timeout + int(cfg.consensus.timeout_s * 1000) + 8 * poll
    return (cfg.strategy.total_rounds + 1) * per_round * 2 + 2 * timeout


def run_experiment(cfg: JobConfig, options: RunOptions | None = None) -> ExperimentReport:
    exp = build_experiment(cfg, options)
    return execute(exp)


def execute(exp: Experiment) -> ExperimentReport:
    started = time.perf_counter()
    test_set: list[Dataset] = []

    def on_round(result: RoundResult) -> None:
        if result.aborted:
            exp.aborted.append((result.round, result.aborted))
            return
        if not test_set:
            test_set.append(_global_test_set(exp.clients, exp.root))
        m = evaluate(result.decision.params, test_set[0])
        per_client = {
            node: doc.get("metrics") for node, doc in result.uploads.items()
        }
        exp.records.append(
            RoundRecord(
                round=result.round,
                accuracy=m.accuracy,
                loss=m.loss,
                elapsed_ms=result.finished_ms - result.started_ms,
                bytes_sent=0,
                bytes_received=0,
                global_digest=result.decision.digest,
                winner=result.decision.worker,
                n_updates=len(result.uploads),
                ballots=result.ballots,
                client_metrics=per_client,
                waits=list(result.waits),
            )
        )

    exp.controller.on_round = on_round
    ctrl = exp.scheduler.spawn(exp.controller.run(), name="controller", priority=0)
    limit = exp.options.max_virtual_ms or _round_budget(exp.cfg)
    exp.scheduler.run(until=lambda: ctrl.done, max_time=limit)
    if not ctrl.done:
        raise RuntimeError("controller stopped before finishing the experiment")

    # Byte totals are read after the run so late deliveries land in their round.
    for rec in exp.records:
        row = exp.bus.traffic_snapshot(rec.round)
        rec.bytes_sent, rec.bytes_received = row.sent, row.received
        holders = [c.global_history[rec.round + 1] for c in exp.clients.values()
                   if rec.round + 1 in c.global_history]
        rec.holders = len(holders)
        rec.clients_agree = bool(holders) and all(h == rec.global_digest for h in holders)

    total = exp.bus.traffic_snapshot()
    ledger = exp.options.ledger
    summary = ledger.summary() if ledger is not None and hasattr(ledger, "summary") else {}
    report = ExperimentReport(
        job_digest=job_digest(exp.cfg, exp.options.seed, exp.options.deterministic),
        seed=exp.options.seed,
        deterministic=exp.options.deterministic,
        total_rounds=exp.cfg.strategy.total_rounds,
        rounds=exp.records,
        aborted_rounds=exp.aborted,
        final_global_digest=exp.state.global_param_ref,
        ledger_summary=summary,
        bytes_sent=total.sent,
        bytes_received=total.received,
        polls={"total": exp.poll_stats.total, "max_outstanding": exp.poll_stats.max_outstanding},
        trace_digest=exp.trace.digest(),
        virtual_ms=exp.scheduler.now,
        wall_seconds=time.perf_counter() - started,
    )
    exp.report = report
    return report

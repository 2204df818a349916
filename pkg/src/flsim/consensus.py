"""Choosing one global model among several workers' aggregates.

A consensus plug-in is any callable ``fn(aggregates, hyperparams) -> ParamVector``
where ``aggregates`` maps worker id to its aggregated ParamVector. Plug-ins are
registered by name and looked up from the job config.

The default, ``majority-hash``, groups aggregates by SHA-256 digest and returns
the largest group's parameters; ties go to the lexicographically smallest
digest. Honest workers that aggregate the same client updates produce
bit-identical vectors, so they always land in one group.

:func:`four_phase_round` runs one complete exchange over the bus without the
controller's state machine: clients share parameters, workers aggregate and
vote, the winner is chosen and redistributed.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import DuplicateConsensus, EmptyInput, InvalidValue, LayoutMismatch, NoAggregates, UnknownConsensus
from .modelcore import ParamVector, param_hash
from .registry import Registry
from .rng import Stream

ConsensusFn = Callable[[Mapping[str, ParamVector], Mapping[str, Any]], ParamVector]


@dataclass(frozen=True)
class Ballot:
    worker: str
    digest: str
    round: int
    n_samples: int = 0

    def encode(self) -> bytes:
        doc = {"worker": self.worker, "digest": self.digest, "round": self.round, "n_samples": self.n_samples}
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def decode(cls, data: bytes) -> "Ballot":
        doc = json.loads(data)
        return cls(doc["worker"], doc["digest"], int(doc["round"]), int(doc.get("n_samples", 0)))

    def matches(self, params: ParamVector) -> bool:
        return param_hash(params) == self.digest


@dataclass(frozen=True)
class ConsensusInput:
    aggregates: Mapping[str, ParamVector]
    hyperparams: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.aggregates:
            raise EmptyInput("consensus needs at least one aggregate")
        object.__setattr__(self, "aggregates", dict(sorted(self.aggregates.items())))
        object.__setattr__(self, "hyperparams", dict(self.hyperparams))


@dataclass(frozen=True)
class Decision:
    """Outcome of a consensus step.

    ``worker`` is the smallest worker id whose aggregate equals the chosen
    parameters, or ``"composite"`` when the plug-in built a new vector.
    """

    worker: str
    digest: str
    params: ParamVector
    tally: Mapping[str, int] = field(default_factory=dict)


CONSENSUS: Registry[ConsensusFn] = Registry("consensus", UnknownConsensus, DuplicateConsensus)


def register_consensus(name: str, fn: ConsensusFn, *, replace: bool = False) -> ConsensusFn:
    return CONSENSUS.register(name, fn, replace=replace)


def _tally(aggregates: Mapping[str, ParamVector]) -> tuple[dict[str, str], Counter]:
    digests = {w: param_hash(p) for w, p in sorted(aggregates.items())}
    return digests, Counter(digests.values())


def majority_digest(digests: Iterable[str]) -> str:
    """Most common digest; ties broken by the lexicographically smallest digest."""
    counts = Counter(digests)
    if not counts:
        raise EmptyInput("no digests to vote on")
    return min(counts, key=lambda d: (-counts[d], d))


def majority_hash_consensus(
    aggregates: Mapping[str, ParamVector], hyperparams: Mapping[str, Any] | None = None
) -> ParamVector:
    if not aggregates:
        raise EmptyInput("consensus needs at least one aggregate")
    digests, _ = _tally(aggregates)
    winner = majority_digest(digests.values())
    rep = min(w for w, d in digests.items() if d == winner)
    return aggregates[rep]


def weighted_mean_consensus(
    aggregates: Mapping[str, ParamVector], hyperparams: Mapping[str, Any] | None = None
) -> ParamVector:
    """Average the aggregates, weighted by ``hyperparams["sample_counts"][worker]`` if given.

    Used to merge cluster heads in a hierarchical topology, where each worker
    only saw its own cluster. Sums run in ascending worker-id order.
    """
    if not aggregates:
        raise EmptyInput("consensus needs at least one aggregate")
    hyperparams = hyperparams or {}
    workers = sorted(aggregates)
    layout = aggregates[workers[0]].layout
    for w in workers:
        if aggregates[w].layout != layout:
            raise LayoutMismatch(f"aggregate from {w!r} has a different layout")
    counts = hyperparams.get("sample_counts") or {}
    raw = [float(counts.get(w, 1.0)) if counts else 1.0 for w in workers]
    total = sum(raw)
    if not total > 0:
        raise InvalidValue("consensus.hyperparams.sample_counts", "must sum to > 0")
    acc = np.zeros_like(aggregates[workers[0]].values)
    for w, c in zip(workers, raw):
        acc = acc + (c / total) * aggregates[w].values
    return ParamVector(acc, layout)


register_consensus("majority-hash", majority_hash_consensus)
register_consensus("weighted-mean", weighted_mean_consensus)


def run_consensus(name: str, inp: ConsensusInput) -> ParamVector:
    fn = CONSENSUS.lookup(name)
    return fn(inp.aggregates, inp.hyperparams)


def decide(name: str, inp: ConsensusInput) -> Decision:
    """Run plug-in ``name`` and identify which worker (if any) submitted the result."""
    params = run_consensus(name, inp)
    digests, counts = _tally(inp.aggregates)
    digest = param_hash(params)
    matching = [w for w, d in digests.items() if d == digest]
    worker = matching[0] if matching else "composite"
    return Decision(worker, digest, params, dict(sorted(counts.items())))


# -- fault injection -------------------------------------------------------------------


def poison(params: ParamVector, mode: str, *, seed: int = 0, scale: float = 10.0, tag: object = 0) -> ParamVector:
    if mode == "negate":
        return ParamVector(-params.values, params.layout)
    if mode == "random-noise":
        noise = Stream(seed, "poison", tag).normal(len(params))
        return ParamVector(params.values + scale * noise, params.layout)
    raise InvalidValue("fault.mode", f"unknown poison mode {mode!r}")


def malicious_worker_wrapper(inner: Callable, mode: str, *, seed: int = 0, scale: float = 10.0) -> Callable:
    """Wrap ``inner(state, updates, n_total_clients) -> ServerState`` to poison its global.

    The noise stream is keyed by ``(seed, state.round)`` so a rerun poisons
    identically. Momentum and control variates are left as computed.
    """
    if mode not in ("negate", "random-noise"):
        raise InvalidValue("fault.mode", f"unknown poison mode {mode!r}")

    def aggregate(state, updates, n_total_clients):
        out = inner(state, updates, n_total_clients)
        bad = poison(out.global_params, mode, seed=seed, scale=scale, tag=out.round)
        return type(out)(bad, out.momentum, out.server_c, out.round)

    aggregate.__wrapped__ = inner
    return aggregate


# -- one standalone exchange -----------------------------------------------------------


@dataclass
class RoundOutcome:
    decision: Decision
    ballots: list[Ballot]
    client_digests: dict[str, str]


def four_phase_round(
    updates: Sequence,
    workers: Sequence,
    bus,
    *,
    consensus: str = "majority-hash",
    hyperparams: Mapping[str, Any] | None = None,
    rnd: int = 1,
    crashed: Iterable[str] = (),
    clients: Optional[Sequence] = None,
    ledger=None,
) -> RoundOutcome:
    """Local sharing, ballot voting, final setting, distribution.

    ``updates`` are the clients' trained :class:`ClientUpdate` objects,
    ``workers`` are :class:`flsim.agents.WorkerAgent` instances whose global
    state is already current. Workers in ``crashed`` drop out after receiving
    client parameters, so they never vote. ``clients`` (ClientAgents) receive
    the winning model if given.
    """
    from . import agents
    from .bus import CONSENSUS_BALLOTS, GLOBAL_PARAMS, client_params_topic, worker_aggregate_topic

    crashed = set(crashed)
    agents.register_topics(bus, [u.node_id for u in updates], [w.node_id for w in workers])
    for w in workers:
        for u in updates:
            bus.subscribe(client_params_topic(u.node_id), w.node_id)
        bus.subscribe(CONSENSUS_BALLOTS, w.node_id)
    for c in clients or ():
        bus.subscribe(GLOBAL_PARAMS, c.node_id, c.on_global_message)
    bus.subscribe(CONSENSUS_BALLOTS, "controller")
    for w in workers:
        bus.subscribe(worker_aggregate_topic(w.node_id), "controller")

    # phase 1: local parameter sharing
    client_digests = {}
    for u in sorted(updates, key=lambda u: u.node_id):
        client_digests[u.node_id] = agents.publish_client_update(bus, u, rnd)
        if ledger is not None:
            ledger.append("client-param", rnd, u.node_id, client_digests[u.node_id])

    # phase 2: aggregation and ballot voting
    ballots: list[Ballot] = []
    aggregates: dict[str, ParamVector] = {}
    for w in sorted(workers, key=lambda w: w.node_id):
        received = agents.collect_client_updates(bus.drain(w.node_id), rnd)
        if w.node_id in crashed:
            continue
        state = w.aggregate(received)
        if state is None:
            continue
        ballot = agents.publish_aggregate(bus, w, rnd)
        ballots.append(ballot)
        aggregates[w.node_id] = state.global_params
        if ledger is not None:
            ledger.append("worker-aggregate", rnd, w.node_id, ballot.digest)
    for w in workers:
        bus.drain(w.node_id)
    if not aggregates:
        raise NoAggregates(f"round {rnd}: no worker produced an aggregate")

    # phase 3: final global parameter setting
    inp = ConsensusInput(aggregates, hyperparams or {})
    if ledger is not None and hasattr(ledger, "run_delegated_consensus"):
        decision = ledger.run_delegated_consensus(lambda i: decide(consensus, i), inp, rnd)
    else:
        decision = decide(consensus, inp)
        if ledger is not None:
            ledger.append("consensus-decision", rnd, decision.worker, decision.digest)

    # phase 4: distribution
    by_id = {w.node_id: w for w in workers}
    winner = by_id.get(decision.worker) or by_id[min(aggregates)]
    extra = winner.broadcast_extra()
    agents.publish_global(bus, decision.params, extra, rnd + 1)
    if ledger is not None:
        ledger.append("global-param", rnd, "controller", decision.digest)
    return RoundOutcome(decision, ballots, client_digests)

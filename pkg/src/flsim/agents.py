"""Client and worker roles plus the wire format they use on the bus.

A parameter bundle is::

    u32 header_len | header (compact sorted JSON) | per vector: u64 len | ParamVector bytes

The header carries ``meta`` (round, node, sample count, ...) and the ordered
list of vector names; ``params`` always comes first when present.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

from .bus import (
    CONSENSUS_BALLOTS,
    CONTROL_PHASE,
    GLOBAL_PARAMS,
    Bus,
    Message,
    client_params_topic,
    control_stage_topic,
    worker_aggregate_topic,
)
from .errors import ZeroTotalSamples
from .modelcore import Metrics, ParamVector, TrainConfig, param_hash
from .partition import Dataset, preprocess_chunk
from .rng import derive_seed
from .strategy import SERVER_C, ClientContext, ClientUpdate, ServerState, Strategy

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
LATEST = "latest"


@dataclass
class Bundle:
    meta: dict[str, Any]
    params: Optional[ParamVector] = None
    extra: dict[str, ParamVector] = field(default_factory=dict)


def encode_bundle(meta: Mapping[str, Any], params: Optional[ParamVector] = None,
                  extra: Optional[Mapping[str, ParamVector]] = None) -> bytes:
    extra = dict(extra or {})
    names = (["params"] if params is not None else []) + sorted(extra)
    header = json.dumps({"meta": dict(meta), "vectors": names}, sort_keys=True, separators=(",", ":"))
    parts = [_U32.pack(len(header)), header.encode()]
    for name in names:
        blob = (params if name == "params" else extra[name]).to_bytes()
        parts.append(_U64.pack(len(blob)))
        parts.append(blob)
    return b"".join(parts)


def decode_bundle(data: bytes) -> Bundle:
    (hlen,) = _U32.unpack_from(data, 0)
    pos = _U32.size
    header = json.loads(data[pos : pos + hlen])
    pos += hlen
    bundle = Bundle(header["meta"])
    for name in header["vectors"]:
        (n,) = _U64.unpack_from(data, pos)
        pos += _U64.size
        vec = ParamVector.from_bytes(data[pos : pos + n])
        pos += n
        if name == "params":
            bundle.params = vec
        else:
            bundle.extra[name] = vec
    return bundle


# -- bus helpers ---------------------------------------------------------------------


def register_topics(bus: Bus, clients: Iterable[str], workers: Iterable[str]) -> None:
    for topic in (GLOBAL_PARAMS, CONTROL_PHASE, CONSENSUS_BALLOTS):
        bus.register_topic(topic)
    clients, workers = list(clients), list(workers)
    for node in clients:
        bus.register_topic(client_params_topic(node))
    for node in workers:
        bus.register_topic(worker_aggregate_topic(node))
    for node in sorted(set(clients) | set(workers)):
        bus.register_topic(control_stage_topic(node))


def publish_client_update(bus: Bus, update: ClientUpdate, rnd: int) -> str:
    """Publish a client's trained parameters; returns their digest."""
    meta = {"round": rnd, "node": update.node_id, "n_samples": update.n_samples}
    payload = encode_bundle(meta, update.params, update.extra_state)
    bus.publish(client_params_topic(update.node_id), LATEST, payload, update.node_id)
    return param_hash(update.params)


def collect_client_updates(messages: Iterable[Message], rnd: int) -> list[ClientUpdate]:
    """Latest update per client for round ``rnd``; other rounds and topics are ignored."""
    latest: dict[str, ClientUpdate] = {}
    for msg in messages:
        if not (msg.topic.startswith("client/") and msg.topic.endswith("/params")):
            continue
        b = decode_bundle(msg.payload)
        if b.meta.get("round") != rnd or b.params is None:
            continue
        node = b.meta["node"]
        latest[node] = ClientUpdate(node, b.params, int(b.meta["n_samples"]), b.extra)
    return [latest[k] for k in sorted(latest)]


def publish_aggregate(bus: Bus, worker: "WorkerAgent", rnd: int):
    """Publish the worker's aggregate bundle and its ballot; returns the Ballot."""
    from .consensus import Ballot

    state = worker.last
    digest = param_hash(state.global_params)
    meta = {"round": rnd, "node": worker.node_id, "n_samples": worker.last_n_samples}
    payload = encode_bundle(meta, state.global_params, worker.broadcast_extra())
    bus.publish(worker_aggregate_topic(worker.node_id), LATEST, payload, worker.node_id)
    ballot = Ballot(worker.node_id, digest, rnd, worker.last_n_samples)
    bus.publish(CONSENSUS_BALLOTS, worker.node_id, ballot.encode(), worker.node_id)
    return ballot


def publish_global(bus: Bus, params: ParamVector, extra: Mapping[str, ParamVector], rnd: int,
                   publisher: str = "controller") -> str:
    """Distribute the global model that clients should train from in round ``rnd``."""
    payload = encode_bundle({"round": rnd, "digest": param_hash(params)}, params, extra)
    bus.publish(GLOBAL_PARAMS, LATEST, payload, publisher)
    return param_hash(params)


# -- roles ----------------------------------------------------------------------------


class ClientAgent:
    """Holds a client's data split, its copy of the global model and local strategy state."""

    def __init__(self, node_id: str, strategy: Strategy, train_cfg: TrainConfig, seed: int = 0):
        self.node_id = node_id
        self.strategy = strategy
        self.train_cfg = train_cfg
        self.seed = seed
        self.train_set: Optional[Dataset] = None
        self.test_set: Optional[Dataset] = None
        self.global_params: Optional[ParamVector] = None
        self.global_extra: dict[str, ParamVector] = {}
        self.global_round = 0
        self.local_params: Optional[ParamVector] = None
        self.local_state: dict[str, Any] = {}
        self.alive = True
        # round -> digest of the global model received for that round
        self.global_history: dict[int, str] = {}

    def load_chunk(self, chunk: Dataset, train_fraction: float) -> None:
        if chunk.n_samples == 0:
            self.train_set = self.test_set = chunk
        else:
            self.train_set, self.test_set = preprocess_chunk(chunk, range(chunk.n_samples), train_fraction)

    def install_global(self, params: ParamVector, extra: Mapping[str, ParamVector], rnd: int) -> None:
        self.global_params = params
        self.global_extra = dict(extra)
        self.global_round = rnd
        self.global_history[rnd] = param_hash(params)

    def on_global_message(self, msg: Message) -> None:
        if not self.alive:
            return
        b = decode_bundle(msg.payload)
        self.install_global(b.params, b.extra, int(b.meta["round"]))

    def local_round(self, rnd: int) -> ClientUpdate:
        if self.global_params is None:
            raise RuntimeError(f"client {self.node_id!r} has no global model")
        if self.train_set is None or self.train_set.n_samples == 0:
            # Nothing to learn from: report the previous local model with zero weight.
            previous = self.local_params if self.local_params is not None else self.global_params
            return ClientUpdate(self.node_id, previous, 0)
        cfg = replace(self.train_cfg, seed=derive_seed(self.seed, "train", self.node_id, rnd))
        ctx = ClientContext(
            self.node_id, self.global_params, self.train_set, cfg, self.global_extra, self.local_state
        )
        update = self.strategy.train(ctx)
        self.local_params = update.params
        return update

    def evaluate_local(self) -> Optional[Metrics]:
        if self.local_params is None or self.test_set is None or self.test_set.n_samples == 0:
            return None
        return self.strategy.test(self.local_params, self.test_set)


AggregateFn = Callable[[ServerState, Sequence[ClientUpdate], int], ServerState]


class WorkerAgent:
    """Aggregates client updates starting from the latest global model it downloaded.

    Server-side state that is not broadcast (FedAvgM momentum) stays with the
    worker between rounds.
    """

    def __init__(self, node_id: str, strategy: Strategy, n_total_clients: int,
                 aggregate_fn: Optional[AggregateFn] = None):
        self.node_id = node_id
        self.strategy = strategy
        self.n_total_clients = n_total_clients
        self.aggregate_fn = aggregate_fn or strategy.aggregate
        self.state: Optional[ServerState] = None
        self.last: Optional[ServerState] = None
        self.last_n_samples = 0
        self.alive = True

    def install_global(self, params: ParamVector, extra: Mapping[str, ParamVector], rnd: int) -> None:
        base = self.last if self.last is not None else self.state
        if base is None:
            base = self.strategy.init_state(params)
        self.state = replace(
            base,
            global_params=params,
            server_c=extra.get(SERVER_C, base.server_c),
            round=rnd - 1,
        )

    def on_global_message(self, msg: Message) -> None:
        if not self.alive:
            return
        b = decode_bundle(msg.payload)
        self.install_global(b.params, b.extra, int(b.meta["round"]))

    def aggregate(self, updates: Sequence[ClientUpdate]) -> Optional[ServerState]:
        """New server state, or None when there is nothing usable to aggregate."""
        if self.state is None:
            raise RuntimeError(f"worker {self.node_id!r} has no global model")
        if not updates:
            return None
        try:
            new = self.aggregate_fn(self.state, list(updates), self.n_total_clients)
        except ZeroTotalSamples:
            return None
        self.last = new
        self.last_n_samples = sum(u.n_samples for u in updates)
        return new

    def broadcast_extra(self) -> dict[str, ParamVector]:
        state = self.last if self.last is not None else self.state
        return self.strategy.broadcast_extra(state) if state is not None else {}

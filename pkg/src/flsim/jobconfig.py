"""Job configuration: the six-section YAML document that scaffolds an experiment.

Sections (all required, no others allowed)::

    dataset:        name, params, partitioner, partitioner_params, train_fraction, seed
    consensus:      name, hyperparams, timeout_s, backend
    topology:       kind (client-server | hierarchical | decentralized), clusters, peers
    strategy:       name, model, train, aggregation, total_rounds
    node_defaults:  poll_interval_ms, timeout_ms
    nodes:          list of {id, role, count, overrides, fault}

Unknown keys anywhere are rejected. A node entry with ``count: N`` expands to
ids ``<id>-01 .. <id>-N`` (zero padded to the width of N).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any, Mapping, Optional

import yaml

from .errors import ConfigError, InvalidValue, MissingSection

SECTIONS = ("dataset", "consensus", "topology", "strategy", "node_defaults", "nodes")
TOPOLOGIES = ("client-server", "hierarchical", "decentralized")
ROLES = ("client", "worker", "client+worker")
CONSENSUS_BACKENDS = ("controller", "ledger")
FAULT_KINDS = ("crash", "malicious")
POISON_MODES = ("negate", "random-noise")


def _frozen(mapping: Mapping) -> Mapping:
    return MappingProxyType(dict(mapping))


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    params: Mapping[str, Any] = field(default_factory=dict)
    partitioner: str = "iid"
    partitioner_params: Mapping[str, Any] = field(default_factory=dict)
    train_fraction: float = 0.8
    seed: int = 0


@dataclass(frozen=True)
class ConsensusSpec:
    name: str = "majority-hash"
    hyperparams: Mapping[str, Any] = field(default_factory=dict)
    timeout_s: float = 30.0
    backend: str = "controller"


@dataclass(frozen=True)
class Cluster:
    name: str
    nodes: tuple[str, ...]


@dataclass(frozen=True)
class TopologySpec:
    kind: str = "client-server"
    clusters: tuple[Cluster, ...] = ()
    peers: Mapping[str, tuple[str, ...]] = field(default_factory=dict)


@dataclass(frozen=True)
class ModelSection:
    kind: str = "logistic-regression"
    hidden_dims: tuple[int, ...] = ()


@dataclass(frozen=True)
class TrainSpec:
    learning_rate: float = 0.1
    batch_size: int = 32
    local_epochs: int = 1
    local_steps: Optional[int] = None


@dataclass(frozen=True)
class AggregationSpec:
    # Defaults chosen for this framework; the source experiments do not state them.
    beta: float = 0.9
    server_lr: float = 1.0
    uniform_weighting: bool = False


@dataclass(frozen=True)
class StrategySpec:
    name: str
    total_rounds: int
    model: ModelSection = ModelSection()
    train: TrainSpec = TrainSpec()
    aggregation: AggregationSpec = AggregationSpec()


@dataclass(frozen=True)
class NodeConfig:
    poll_interval_ms: int = 100
    timeout_ms: int = 30_000


@dataclass(frozen=True)
class FaultSpec:
    kind: str
    round: int = 1
    phase: int = 1
    mode: str = "negate"
    scale: float = 10.0


@dataclass(frozen=True)
class NodeEntry:
    id: str
    role: str
    overrides: Mapping[str, int] = field(default_factory=dict)
    fault: Optional[FaultSpec] = None

    @property
    def is_client(self) -> bool:
        return self.role in ("client", "client+worker")

    @property
    def is_worker(self) -> bool:
        return self.role in ("worker", "client+worker")


@dataclass(frozen=True)
class JobConfig:
    dataset: DatasetSpec
    consensus: ConsensusSpec
    topology: TopologySpec
    strategy: StrategySpec
    node_defaults: NodeConfig
    nodes: tuple[NodeEntry, ...]

    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    def clients(self) -> list[str]:
        return sorted(n.id for n in self.nodes if n.is_client)

    def workers(self) -> list[str]:
        return sorted(n.id for n in self.nodes if n.is_worker)


@dataclass(frozen=True)
class ResolvedNode:
    id: str
    role: str
    config: NodeConfig
    fault: Optional[FaultSpec] = None


# -- strict field readers ----------------------------------------------------------


def _mapping(value: Any, path: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise InvalidValue(path, "must be a mapping")
    return value


def _check_keys(doc: Mapping, path: str, allowed: tuple[str, ...]) -> None:
    extra = sorted(set(doc) - set(allowed))
    if extra:
        raise InvalidValue(f"{path}.{extra[0]}" if path else str(extra[0]), "unknown key")


def _int(doc: Mapping, key: str, path: str, default: Any, minimum: Optional[int] = None):
    value = doc.get(key, default)
    if value is None and default is None:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise InvalidValue(f"{path}.{key}", "must be an integer")
    if minimum is not None and value < minimum:
        raise InvalidValue(f"{path}.{key}", f"must be ≥ {minimum}")
    return value


def _float(doc: Mapping, key: str, path: str, default: float) -> float:
    value = doc.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvalidValue(f"{path}.{key}", "must be a number")
    return float(value)


def _str(doc: Mapping, key: str, path: str, default: Optional[str] = None) -> str:
    value = doc.get(key, default)
    if not isinstance(value, str) or not value:
        raise InvalidValue(f"{path}.{key}", "must be a non-empty string")
    return value


def _bool(doc: Mapping, key: str, path: str, default: bool) -> bool:
    value = doc.get(key, default)
    if not isinstance(value, bool):
        raise InvalidValue(f"{path}.{key}", "must be true or false")
    return value


# -- section parsers -----------------------------------------------------------------


def _parse_dataset(doc) -> DatasetSpec:
    p = "dataset"
    doc = _mapping(doc, p)
    _check_keys(doc, p, ("name", "params", "partitioner", "partitioner_params", "train_fraction", "seed"))
    frac = _float(doc, "train_fraction", p, 0.8)
    if not 0.0 < frac < 1.0:
        raise InvalidValue(f"{p}.train_fraction", "must lie strictly between 0 and 1")
    params = _mapping(doc.get("params"), f"{p}.params")
    n = params.get("n_samples")
    if n is not None and (isinstance(n, bool) or not isinstance(n, int) or n < 1):
        raise InvalidValue(f"{p}.params.n_samples", "must be ≥ 1")
    pparams = _mapping(doc.get("partitioner_params"), f"{p}.partitioner_params")
    if "alpha" in pparams:
        alpha = pparams["alpha"]
        if isinstance(alpha, bool) or not isinstance(alpha, (int, float)) or not alpha > 0:
            raise InvalidValue(f"{p}.partitioner_params.alpha", "must be > 0")
    return DatasetSpec(
        name=_str(doc, "name", p),
        params=_frozen(params),
        partitioner=_str(doc, "partitioner", p, "iid"),
        partitioner_params=_frozen(pparams),
        train_fraction=frac,
        seed=_int(doc, "seed", p, 0, 0),
    )


def _parse_consensus(doc) -> ConsensusSpec:
    p = "consensus"
    doc = _mapping(doc, p)
    _check_keys(doc, p, ("name", "hyperparams", "timeout_s", "backend"))
    timeout = _float(doc, "timeout_s", p, 30.0)
    if not timeout > 0:
        raise InvalidValue(f"{p}.timeout_s", "must be > 0")
    backend = _str(doc, "backend", p, "controller")
    if backend not in CONSENSUS_BACKENDS:
        raise InvalidValue(f"{p}.backend", f"must be one of {CONSENSUS_BACKENDS}")
    return ConsensusSpec(
        name=_str(doc, "name", p, "majority-hash"),
        hyperparams=_frozen(_mapping(doc.get("hyperparams"), f"{p}.hyperparams")),
        timeout_s=timeout,
        backend=backend,
    )


def _id_list(value, path: str) -> tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise InvalidValue(path, "must be a list of node ids")
    return tuple(value)


def _parse_topology(doc) -> TopologySpec:
    p = "topology"
    doc = _mapping(doc, p)
    _check_keys(doc, p, ("kind", "clusters", "peers"))
    kind = _str(doc, "kind", p, "client-server")
    if kind not in TOPOLOGIES:
        raise InvalidValue(f"{p}.kind", f"must be one of {TOPOLOGIES}")
    clusters = []
    raw_clusters = doc.get("clusters") or []
    if not isinstance(raw_clusters, list):
        raise InvalidValue(f"{p}.clusters", "must be a list")
    for i, c in enumerate(raw_clusters):
        cp = f"{p}.clusters[{i}]"
        c = _mapping(c, cp)
        _check_keys(c, cp, ("name", "nodes"))
        clusters.append(Cluster(_str(c, "name", cp, f"cluster-{i}"), _id_list(c.get("nodes"), f"{cp}.nodes")))
    peers = {}
    for node, lst in _mapping(doc.get("peers"), f"{p}.peers").items():
        peers[str(node)] = _id_list(lst, f"{p}.peers.{node}")
    return TopologySpec(kind, tuple(clusters), _frozen(peers))


def _parse_strategy(doc) -> StrategySpec:
    p = "strategy"
    doc = _mapping(doc, p)
    _check_keys(doc, p, ("name", "model", "train", "aggregation", "total_rounds"))
    model = _mapping(doc.get("model"), f"{p}.model")
    _check_keys(model, f"{p}.model", ("kind", "hidden_dims"))
    hidden = model.get("hidden_dims") or []
    if not isinstance(hidden, list) or any(isinstance(h, bool) or not isinstance(h, int) or h < 1 for h in hidden):
        raise InvalidValue(f"{p}.model.hidden_dims", "must be a list of integers ≥ 1")
    kind = _str(model, "kind", f"{p}.model", "logistic-regression")
    if kind not in ("logistic-regression", "mlp"):
        raise InvalidValue(f"{p}.model.kind", "must be logistic-regression or mlp")
    if kind == "mlp" and not hidden:
        raise InvalidValue(f"{p}.model.hidden_dims", "mlp needs at least one hidden layer")
    if kind == "logistic-regression" and hidden:
        raise InvalidValue(f"{p}.model.hidden_dims", "logistic regression has no hidden layers")

    train = _mapping(doc.get("train"), f"{p}.train")
    tp = f"{p}.train"
    _check_keys(train, tp, ("learning_rate", "batch_size", "local_epochs", "local_steps"))
    lr = _float(train, "learning_rate", tp, 0.1)
    if not lr > 0:
        raise InvalidValue(f"{tp}.learning_rate", "must be > 0")

    agg = _mapping(doc.get("aggregation"), f"{p}.aggregation")
    ap = f"{p}.aggregation"
    _check_keys(agg, ap, ("beta", "server_lr", "uniform_weighting"))
    beta = _float(agg, "beta", ap, 0.9)
    if not 0.0 <= beta < 1.0:
        raise InvalidValue(f"{ap}.beta", "must lie in [0, 1)")
    server_lr = _float(agg, "server_lr", ap, 1.0)
    if not server_lr > 0:
        raise InvalidValue(f"{ap}.server_lr", "must be > 0")

    if "total_rounds" not in doc:
        raise InvalidValue(f"{p}.total_rounds", "is required")
    return StrategySpec(
        name=_str(doc, "name", p),
        total_rounds=_int(doc, "total_rounds", p, None, 1),
        model=ModelSection(kind, tuple(hidden)),
        train=TrainSpec(
            learning_rate=lr,
            batch_size=_int(train, "batch_size", tp, 32, 1),
            local_epochs=_int(train, "local_epochs", tp, 1, 1),
            local_steps=_int(train, "local_steps", tp, None, 1),
        ),
        aggregation=AggregationSpec(beta, server_lr, _bool(agg, "uniform_weighting", ap, False)),
    )


def _parse_node_config(doc, path: str, base: NodeConfig) -> dict:
    doc = _mapping(doc, path)
    _check_keys(doc, path, ("poll_interval_ms", "timeout_ms"))
    out = {}
    for key in ("poll_interval_ms", "timeout_ms"):
        if key in doc:
            out[key] = _int(doc, key, path, getattr(base, key), 1)
    return out


def _parse_fault(doc, path: str) -> Optional[FaultSpec]:
    if doc is None:
        return None
    doc = _mapping(doc, path)
    _check_keys(doc, path, ("kind", "round", "phase", "mode", "scale"))
    kind = _str(doc, "kind", path)
    if kind not in FAULT_KINDS:
        raise InvalidValue(f"{path}.kind", f"must be one of {FAULT_KINDS}")
    mode = _str(doc, "mode", path, "negate")
    if mode not in POISON_MODES:
        raise InvalidValue(f"{path}.mode", f"must be one of {POISON_MODES}")
    phase = _int(doc, "phase", path, 1, 1)
    if phase > 2:
        raise InvalidValue(f"{path}.phase", "must be 1 or 2")
    return FaultSpec(kind, _int(doc, "round", path, 1, 0), phase, mode, _float(doc, "scale", path, 10.0))


def _parse_nodes(doc, kind: str, defaults: NodeConfig) -> tuple[NodeEntry, ...]:
    if not isinstance(doc, list) or not doc:
        raise InvalidValue("nodes", "must be a non-empty list")
    out: list[NodeEntry] = []
    for i, entry in enumerate(doc):
        p = f"nodes[{i}]"
        entry = _mapping(entry, p)
        _check_keys(entry, p, ("id", "role", "count", "overrides", "fault"))
        base_id = _str(entry, "id", p)
        default_role = "client+worker" if kind == "decentralized" else None
        role = entry.get("role", default_role)
        if role not in ROLES:
            raise InvalidValue(f"{p}.role", f"must be one of {ROLES}")
        if kind == "decentralized" and role != "client+worker":
            raise InvalidValue(f"{p}.role", "decentralized topology needs client+worker nodes")
        overrides = _frozen(_parse_node_config(entry.get("overrides"), f"{p}.overrides", defaults))
        fault = _parse_fault(entry.get("fault"), f"{p}.fault")
        if fault is not None and fault.kind == "malicious" and role == "client":
            raise InvalidValue(f"{p}.fault.kind", "only workers can be malicious")
        count = _int(entry, "count", p, None, 1) if "count" in entry else None
        if count is None:
            ids = [base_id]
        else:
            width = len(str(count))
            ids = [f"{base_id}-{j:0{width}d}" for j in range(1, count + 1)]
        for node_id in ids:
            if "/" in node_id or node_id.strip() != node_id:
                raise InvalidValue(f"{p}.id", "node ids may not contain '/' or surrounding spaces")
            out.append(NodeEntry(node_id, role, overrides, fault))
    seen = set()
    for n in out:
        if n.id in seen:
            raise InvalidValue("nodes", f"duplicate node id {n.id!r}")
        seen.add(n.id)
    return tuple(out)


def _validate_topology(topo: TopologySpec, nodes: tuple[NodeEntry, ...]) -> None:
    ids = {n.id for n in nodes}
    roles = {n.id: n for n in nodes}
    if topo.kind == "hierarchical":
        if not topo.clusters:
            raise InvalidValue("topology.clusters", "hierarchical topology needs clusters")
        placed: dict[str, str] = {}
        for c in topo.clusters:
            for node in c.nodes:
                if node not in ids:
                    raise InvalidValue(f"topology.clusters.{c.name}", f"unknown node {node!r}")
                if node in placed:
                    raise InvalidValue(f"topology.clusters.{c.name}", f"node {node!r} is in two clusters")
                placed[node] = c.name
            if not any(roles[n].is_worker for n in c.nodes):
                raise InvalidValue(f"topology.clusters.{c.name}", "cluster needs a worker")
            if not any(roles[n].is_client for n in c.nodes):
                raise InvalidValue(f"topology.clusters.{c.name}", "cluster needs a client")
        missing = sorted(ids - set(placed))
        if missing:
            raise InvalidValue("topology.clusters", f"node {missing[0]!r} is in no cluster")
    elif topo.clusters:
        raise InvalidValue("topology.clusters", f"clusters are only valid for hierarchical topology")
    if topo.peers:
        if topo.kind != "decentralized":
            raise InvalidValue("topology.peers", "peers are only valid for decentralized topology")
        for node, peers in topo.peers.items():
            for q in (node, *peers):
                if q not in ids:
                    raise InvalidValue(f"topology.peers.{node}", f"unknown node {q!r}")


def _validate_registries(cfg: JobConfig) -> None:
    from .consensus import CONSENSUS
    from .partition import DATASETS, PARTITIONERS
    from .strategy import STRATEGIES

    STRATEGIES.lookup(cfg.strategy.name)
    CONSENSUS.lookup(cfg.consensus.name)
    DATASETS.lookup(cfg.dataset.name)
    PARTITIONERS.lookup(cfg.dataset.partitioner)


def job_config_from_dict(doc: Any) -> JobConfig:
    if not isinstance(doc, dict):
        raise ConfigError("job configuration must be a mapping of sections")
    for name in SECTIONS:
        if name not in doc:
            raise MissingSection(name)
    _check_keys(doc, "", SECTIONS)
    nd = _mapping(doc["node_defaults"], "node_defaults")
    _check_keys(nd, "node_defaults", ("poll_interval_ms", "timeout_ms"))
    defaults = NodeConfig(
        poll_interval_ms=_int(nd, "poll_interval_ms", "node_defaults", 100, 1),
        timeout_ms=_int(nd, "timeout_ms", "node_defaults", 30_000, 1),
    )
    topology = _parse_topology(doc["topology"])
    nodes = _parse_nodes(doc["nodes"], topology.kind, defaults)
    cfg = JobConfig(
        dataset=_parse_dataset(doc["dataset"]),
        consensus=_parse_consensus(doc["consensus"]),
        topology=topology,
        strategy=_parse_strategy(doc["strategy"]),
        node_defaults=defaults,
        nodes=nodes,
    )
    if not cfg.clients():
        raise InvalidValue("nodes", "need at least one client")
    if not cfg.workers():
        raise InvalidValue("nodes", "need at least one worker")
    _validate_topology(topology, nodes)
    _validate_registries(cfg)
    return cfg


def parse_job_config(text: str) -> JobConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"job configuration is not valid YAML: {exc}") from None
    return job_config_from_dict(doc)


def load_job_config(path: str | Path) -> JobConfig:
    return parse_job_config(Path(path).read_text())


# -- serialization ---------------------------------------------------------------------


def _plain(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def job_config_to_dict(cfg: JobConfig) -> dict:
    s = cfg.strategy
    nodes = []
    for n in cfg.nodes:
        entry: dict[str, Any] = {"id": n.id, "role": n.role}
        if n.overrides:
            entry["overrides"] = _plain(n.overrides)
        if n.fault is not None:
            f = n.fault
            entry["fault"] = {"kind": f.kind, "round": f.round, "phase": f.phase, "mode": f.mode, "scale": f.scale}
        nodes.append(entry)
    topology: dict[str, Any] = {"kind": cfg.topology.kind}
    if cfg.topology.clusters:
        topology["clusters"] = [{"name": c.name, "nodes": list(c.nodes)} for c in cfg.topology.clusters]
    if cfg.topology.peers:
        topology["peers"] = _plain(cfg.topology.peers)
    train = {
        "learning_rate": s.train.learning_rate,
        "batch_size": s.train.batch_size,
        "local_epochs": s.train.local_epochs,
    }
    if s.train.local_steps is not None:
        train["local_steps"] = s.train.local_steps
    return {
        "dataset": {
            "name": cfg.dataset.name,
            "params": _plain(cfg.dataset.params),
            "partitioner": cfg.dataset.partitioner,
            "partitioner_params": _plain(cfg.dataset.partitioner_params),
            "train_fraction": cfg.dataset.train_fraction,
            "seed": cfg.dataset.seed,
        },
        "consensus": {
            "name": cfg.consensus.name,
            "hyperparams": _plain(cfg.consensus.hyperparams),
            "timeout_s": cfg.consensus.timeout_s,
            "backend": cfg.consensus.backend,
        },
        "topology": topology,
        "strategy": {
            "name": s.name,
            "model": {"kind": s.model.kind, "hidden_dims": list(s.model.hidden_dims)},
            "train": train,
            "aggregation": {
                "beta": s.aggregation.beta,
                "server_lr": s.aggregation.server_lr,
                "uniform_weighting": s.aggregation.uniform_weighting,
            },
            "total_rounds": s.total_rounds,
        },
        "node_defaults": {
            "poll_interval_ms": cfg.node_defaults.poll_interval_ms,
            "timeout_ms": cfg.node_defaults.timeout_ms,
        },
        "nodes": nodes,
    }


def serialize_job_config(cfg: JobConfig) -> str:
    return yaml.safe_dump(job_config_to_dict(cfg), sort_keys=False)


def job_digest(cfg: JobConfig, seed: int, deterministic: bool) -> str:
    doc = {"job": job_config_to_dict(cfg), "seed": seed, "deterministic": deterministic}
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


# -- role resolution and runtime overrides ---------------------------------------------


def resolve_roles(cfg: JobConfig) -> dict[str, ResolvedNode]:
    """Effective role and node config for every node, keyed and ordered by node id."""
    out = {}
    for n in sorted(cfg.nodes, key=lambda e: e.id):
        merged = {
            "poll_interval_ms": cfg.node_defaults.poll_interval_ms,
            "timeout_ms": cfg.node_defaults.timeout_ms,
            **n.overrides,
        }
        out[n.id] = ResolvedNode(n.id, n.role, NodeConfig(**merged), n.fault)
    return out


def _env_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off", ""):
        return False
    raise InvalidValue("DETERMINISTIC", f"cannot interpret {text!r} as a boolean")


def runtime_settings(
    cfg: JobConfig,
    *,
    seed: Optional[int] = None,
    deterministic: Optional[bool] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> tuple[int, bool]:
    """Resolve (seed, deterministic): command-line flag, then environment, then config."""
    env = os.environ if environ is None else environ
    if seed is None:
        raw = env.get("RANDOM_SEED")
        if raw is not None and raw.strip():
            try:
                seed = int(raw)
            except ValueError:
                raise InvalidValue("RANDOM_SEED", f"{raw!r} is not an integer") from None
        else:
            seed = cfg.dataset.seed
    if deterministic is None:
        raw = env.get("DETERMINISTIC")
        deterministic = _env_bool(raw) if raw is not None else False
    return seed, deterministic

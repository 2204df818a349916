"""Aggregation strategies: FedAvg, FedAvgM and SCAFFOLD, plus the strategy registry.

Every weighted sum runs in ascending node-id order so that two workers fed the
same updates produce bit-identical aggregates; consensus votes on their hashes.

Server-side updates are evaluated in the algebraically equivalent forms

    FedAvgM:  global' = (1 - lr) * global + lr * avg - (lr * beta) * momentum
    SCAFFOLD: global' = (1 - lr) * global + lr * mean(y_i)

which reduce to the plain FedAvg average bit-for-bit when ``beta = 0`` and
``lr = 1``. The subtract-then-add forms do not.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Mapping, MutableMapping, Optional, Sequence

import numpy as np

from .errors import (
    DuplicateStrategy,
    EmptyUpdateSet,
    InvalidValue,
    LayoutMismatch,
    MissingExtraState,
    UnknownStrategy,
    ZeroTotalSamples,
)
from .modelcore import (
    Metrics,
    ParamVector,
    TrainConfig,
    evaluate,
    train_local,
    zeros_like,
)
from .registry import Registry

SCAFFOLD_DELTA = "scaffold_delta"
SERVER_C = "server_c"


@dataclass(frozen=True)
class ClientUpdate:
    node_id: str
    params: ParamVector
    n_samples: int
    extra_state: Mapping[str, ParamVector] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_samples < 0:
            raise InvalidValue("n_samples", "must be >= 0")


@dataclass(frozen=True)
class ServerState:
    global_params: ParamVector
    momentum: ParamVector
    server_c: ParamVector
    round: int = 0

    @classmethod
    def initial(cls, global_params: ParamVector) -> "ServerState":
        zero = zeros_like(global_params)
        return cls(global_params, zero, zero, 0)


@dataclass(frozen=True)
class StrategyConfig:
    beta: float = 0.9
    server_lr: float = 1.0
    local_steps: Optional[int] = None
    uniform_weighting: bool = False

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise InvalidValue("strategy.aggregation.beta", "must lie in [0, 1)")
        if not self.server_lr > 0:
            raise InvalidValue("strategy.aggregation.server_lr", "must be > 0")
        if self.local_steps is not None and self.local_steps < 1:
            raise InvalidValue("strategy.train.local_steps", "must be >= 1")


# -- aggregation primitives -----------------------------------------------------


def _ordered(updates: Sequence[ClientUpdate]) -> list[ClientUpdate]:
    if not updates:
        raise EmptyUpdateSet("no client updates to aggregate")
    ordered = sorted(updates, key=lambda u: u.node_id)
    layout = ordered[0].params.layout
    for u in ordered[1:]:
        if u.params.layout != layout:
            raise LayoutMismatch(f"update from {u.node_id!r} has a different layout")
    return ordered


def weighted_sum(vectors: Sequence[ParamVector], weights: Sequence[float]) -> ParamVector:
    """``sum_i w_i * v_i`` accumulated left to right."""
    acc = np.zeros_like(vectors[0].values)
    for w, v in zip(weights, vectors):
        acc = acc + w * v.values
    return ParamVector(acc, vectors[0].layout)


def fedavg_aggregate(updates: Sequence[ClientUpdate], *, uniform: bool = False) -> ParamVector:
    """Sample-weighted mean ``sum_i (n_i / N) * params_i`` over updates with ``n_i > 0``.

    With ``uniform=True`` each participating update gets weight ``1 / |S|``.
    """
    ordered = [u for u in _ordered(updates) if u.n_samples > 0]
    if not ordered:
        raise ZeroTotalSamples("every update reported zero samples")
    if uniform:
        weights = [1.0 / len(ordered)] * len(ordered)
    else:
        total = sum(u.n_samples for u in ordered)
        weights = [u.n_samples / total for u in ordered]
    return weighted_sum([u.params for u in ordered], weights)


def fedavgm_aggregate(
    state: ServerState, updates: Sequence[ClientUpdate], cfg: StrategyConfig
) -> ServerState:
    """Server momentum: ``delta = global - avg; m' = beta*m + delta; global' = global - lr*m'``."""
    avg = fedavg_aggregate(updates, uniform=cfg.uniform_weighting)
    g, m = state.global_params.values, state.momentum.values
    delta = g - avg.values
    momentum = cfg.beta * m + delta
    lr = cfg.server_lr
    new_global = ((1.0 - lr) * g + lr * avg.values) - (lr * cfg.beta) * m
    layout = avg.layout
    return replace(
        state,
        global_params=ParamVector(new_global, layout),
        momentum=ParamVector(momentum, layout),
        round=state.round + 1,
    )


def scaffold_client_step(
    params: ParamVector,
    data,
    client_c: ParamVector,
    server_c: ParamVector,
    cfg: StrategyConfig,
    train: TrainConfig,
    *,
    node_id: str = "",
) -> tuple[ClientUpdate, ParamVector]:
    """Local SCAFFOLD training from the incoming global ``params``.

    Runs ``K`` steps with gradient ``g - client_c + server_c`` (``K`` is
    ``cfg.local_steps`` when set, otherwise whatever ``train`` implies), then

        client_c' = client_c - server_c + (x - y) / (K * lr)

    Returns the update (carrying ``client_c' - client_c`` as extra state) and
    ``client_c'`` for the client to keep.
    """
    if client_c.layout != params.layout or server_c.layout != params.layout:
        raise LayoutMismatch("control variates must share the model layout")
    if cfg.local_steps is not None:
        train = replace(train, max_steps=cfg.local_steps)
    correction = ParamVector(server_c.values - client_c.values, params.layout)
    result = train_local(params, data, train, correction=correction)
    x, y = params.values, result.params.values
    if train.learning_rate > 0:
        new_c = client_c.values - server_c.values + (x - y) / (result.steps * train.learning_rate)
    else:
        new_c = client_c.values - server_c.values
    client_c_new = ParamVector(new_c, params.layout)
    delta = ParamVector(new_c - client_c.values, params.layout)
    update = ClientUpdate(node_id, result.params, data.n_samples, {SCAFFOLD_DELTA: delta})
    return update, client_c_new


def scaffold_server_aggregate(
    state: ServerState,
    updates: Sequence[ClientUpdate],
    cfg: StrategyConfig,
    n_total_clients: int,
) -> ServerState:
    """``global' = global + (lr/|S|) sum(y_i - global)``; ``c' = c + (1/N) sum delta_i``."""
    ordered = [u for u in _ordered(updates) if u.n_samples > 0]
    if not ordered:
        raise ZeroTotalSamples("every update reported zero samples")
    for u in ordered:
        if SCAFFOLD_DELTA not in u.extra_state:
            raise MissingExtraState(SCAFFOLD_DELTA)
    if n_total_clients < 1:
        raise InvalidValue("n_total_clients", "must be >= 1")
    mean = weighted_sum([u.params for u in ordered], [1.0 / len(ordered)] * len(ordered))
    lr = cfg.server_lr
    new_global = (1.0 - lr) * state.global_params.values + lr * mean.values
    delta_sum = weighted_sum(
        [u.extra_state[SCAFFOLD_DELTA] for u in ordered], [1.0] * len(ordered)
    )
    server_c = state.server_c.values + (1.0 / n_total_clients) * delta_sum.values
    layout = mean.layout
    return replace(
        state,
        global_params=ParamVector(new_global, layout),
        server_c=ParamVector(server_c, layout),
        round=state.round + 1,
    )


# -- strategy objects ---------------------------------------------------------------


@dataclass
class ClientContext:
    """Everything a client needs for one round of local training."""

    node_id: str
    global_params: ParamVector
    train_set: Any
    train_cfg: TrainConfig
    global_extra: Mapping[str, ParamVector] = field(default_factory=dict)
    # Survives across rounds on the same client (e.g. SCAFFOLD's client_c).
    local_state: MutableMapping[str, Any] = field(default_factory=dict)


class Strategy:
    """Base FL strategy: ``train`` on clients, ``aggregate`` on workers, ``test`` anywhere."""

    name = "base"

    def __init__(self, cfg: StrategyConfig | None = None):
        self.cfg = cfg or StrategyConfig()

    def init_state(self, global_params: ParamVector) -> ServerState:
        return ServerState.initial(global_params)

    def train(self, ctx: ClientContext) -> ClientUpdate:
        result = train_local(ctx.global_params, ctx.train_set, ctx.train_cfg)
        return ClientUpdate(ctx.node_id, result.params, ctx.train_set.n_samples)

    def aggregate(
        self, state: ServerState, updates: Sequence[ClientUpdate], n_total_clients: int
    ) -> ServerState:
        raise NotImplementedError

    def test(self, params: ParamVector, data) -> Metrics:
        return evaluate(params, data)

    def broadcast_extra(self, state: ServerState) -> dict[str, ParamVector]:
        """Extra server state shipped to clients alongside the global model."""
        return {}


class FedAvg(Strategy):
    name = "fedavg"

    def aggregate(self, state, updates, n_total_clients):
        new = fedavg_aggregate(updates, uniform=self.cfg.uniform_weighting)
        return replace(state, global_params=new, round=state.round + 1)


class FedAvgM(Strategy):
    name = "fedavgm"

    def aggregate(self, state, updates, n_total_clients):
        return fedavgm_aggregate(state, updates, self.cfg)


class Scaffold(Strategy):
    name = "scaffold"

    def train(self, ctx: ClientContext) -> ClientUpdate:
        zero = zeros_like(ctx.global_params)
        client_c = ctx.local_state.get("client_c", zero)
        server_c = ctx.global_extra.get(SERVER_C, zero)
        update, new_c = scaffold_client_step(
            ctx.global_params,
            ctx.train_set,
            client_c,
            server_c,
            self.cfg,
            ctx.train_cfg,
            node_id=ctx.node_id,
        )
        ctx.local_state["client_c"] = new_c
        return update

    def aggregate(self, state, updates, n_total_clients):
        return scaffold_server_aggregate(state, updates, self.cfg, n_total_clients)

    def broadcast_extra(self, state):
        return {SERVER_C: state.server_c}


STRATEGIES: Registry[type[Strategy]] = Registry("strategy", UnknownStrategy, DuplicateStrategy)


def register_strategy(name: str, implementation: type[Strategy]) -> type[Strategy]:
    return STRATEGIES.register(name, implementation)


def lookup_strategy(name: str) -> type[Strategy]:
    return STRATEGIES.lookup(name)


register_strategy("fedavg", FedAvg)
register_strategy("fedavgm", FedAvgM)
register_strategy("scaffold", Scaffold)

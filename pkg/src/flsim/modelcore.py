"""Flat parameter vectors and the two built-in models.

A :class:`ParamVector` is the unit that travels on the bus, gets aggregated,
hashed and voted on. Its canonical byte encoding (``to_bytes``) is::

    b"FLPV" | u32 version=1 | u32 n_tensors
    per tensor: u16 len(name) | utf-8 name | u8 ndim | u64 dim * ndim
    u64 n_values | n_values * float64 (little endian)

and ``param_hash`` is the SHA-256 of that encoding, so two vectors hash equal
exactly when their layouts and value bits are equal.

Models are described by their layout alone: a sequence of ``(W, b)`` pairs.
One pair is multinomial logistic regression; more pairs form an MLP with tanh
hidden activations. Loss is mean softmax cross-entropy.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np

from .errors import EmptyDataset, InvalidValue, LayoutMismatch, NonFiniteParams
from .rng import Stream

Layout = tuple[tuple[str, tuple[int, ...]], ...]

_MAGIC = b"FLPV"
_VERSION = 1
PROB_FLOOR = 1e-12
_MAX_NLL = -math.log(PROB_FLOOR)

MODEL_KINDS = ("logistic-regression", "mlp")


def _normalize_layout(layout) -> Layout:
    return tuple((str(name), tuple(int(d) for d in shape)) for name, shape in layout)


def layout_size(layout: Layout) -> int:
    return sum(math.prod(shape) for _, shape in layout)


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Immutable float64 vector plus the layout describing its flattening."""

    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        layout = _normalize_layout(self.layout)
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if values.size != layout_size(layout):
            raise LayoutMismatch(
                f"{values.size} values do not fit layout of size {layout_size(layout)}"
            )
        if not np.all(np.isfinite(values)):
            raise NonFiniteParams("parameter vector contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "layout", layout)

    def __len__(self) -> int:
        return self.values.size

    def __repr__(self) -> str:
        shapes = ", ".join(f"{n}{list(s)}" for n, s in self.layout)
        return f"ParamVector([{shapes}], digest={param_hash(self)[:12]})"

    def tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        offset = 0
        for name, shape in self.layout:
            size = math.prod(shape)
            yield name, self.values[offset : offset + size].reshape(shape)
            offset += size

    def bit_equal(self, other: "ParamVector") -> bool:
        return self.layout == other.layout and self.values.tobytes() == other.values.tobytes()

    def to_bytes(self) -> bytes:
        parts = [_MAGIC, struct.pack("<II", _VERSION, len(self.layout))]
        for name, shape in self.layout:
            raw = name.encode("utf-8")
            parts.append(struct.pack("<H", len(raw)))
            parts.append(raw)
            parts.append(struct.pack("<B", len(shape)))
            parts.append(struct.pack(f"<{len(shape)}Q", *shape))
        parts.append(struct.pack("<Q", self.values.size))
        parts.append(self.values.astype("<f8", copy=False).tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ParamVector":
        if data[:4] != _MAGIC:
            raise ValueError("not a parameter vector payload")
        version, n_tensors = struct.unpack_from("<II", data, 4)
        if version != _VERSION:
            raise ValueError(f"unsupported parameter vector version {version}")
        pos = 12
        layout = []
        for _ in range(n_tensors):
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
            layout.append((name, tuple(shape)))
        (n,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        values = np.frombuffer(data, dtype="<f8", count=n, offset=pos)
        return cls(values.astype(np.float64), tuple(layout))


# -- vector algebra -----------------------------------------------------------


def _check(x: ParamVector, y: ParamVector) -> None:
    if x.layout != y.layout:
        raise LayoutMismatch(f"layouts differ: {x.layout} vs {y.layout}")


def axpy(a: float, x: ParamVector, y: ParamVector) -> ParamVector:
    """``a * x + y``."""
    _check(x, y)
    return ParamVector(a * x.values + y.values, x.layout)


def scale(a: float, x: ParamVector) -> ParamVector:
    return ParamVector(a * x.values, x.layout)


def zeros_like(x: ParamVector) -> ParamVector:
    return ParamVector(np.zeros_like(x.values), x.layout)


def add(x: ParamVector, y: ParamVector) -> ParamVector:
    _check(x, y)
    return ParamVector(x.values + y.values, x.layout)


def sub(x: ParamVector, y: ParamVector) -> ParamVector:
    _check(x, y)
    return ParamVector(x.values - y.values, x.layout)


def param_hash(x: ParamVector) -> str:
    """Hex SHA-256 of the canonical encoding (layout + little-endian values)."""
    return hashlib.sha256(x.to_bytes()).hexdigest()


# -- model specification ---------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    n_classes: int
    hidden_dims: tuple[int, ...] = ()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.kind not in MODEL_KINDS:
            raise InvalidValue("model.kind", f"must be one of {MODEL_KINDS}")
        if self.input_dim < 1 or self.n_classes < 1:
            raise InvalidValue("model", "input_dim and n_classes must be >= 1")
        if self.kind == "mlp" and not self.hidden_dims:
            raise InvalidValue("model.hidden_dims", "mlp needs at least one hidden layer")
        if self.kind == "logistic-regression" and self.hidden_dims:
            raise InvalidValue("model.hidden_dims", "logistic regression has no hidden layers")
        if any(h < 1 for h in self.hidden_dims):
            raise InvalidValue("model.hidden_dims", "dims must be >= 1")

    def layout(self) -> Layout:
        if self.kind == "logistic-regression":
            return (("W", (self.n_classes, self.input_dim)), ("b", (self.n_classes,)))
        dims = (self.input_dim, *self.hidden_dims, self.n_classes)
        out = []
        for i in range(len(dims) - 1):
            out.append((f"W{i}", (dims[i + 1], dims[i])))
            out.append((f"b{i}", (dims[i + 1],)))
        return tuple(out)


def init_params(spec: ModelSpec) -> ParamVector:
    """Fan-in scaled uniform weights ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``, zero biases."""
    layout = spec.layout()
    stream = Stream(spec.seed, "init", spec.kind)
    chunks = []
    for name, shape in layout:
        if len(shape) == 2:
            bound = 1.0 / math.sqrt(shape[1])
            chunks.append((2.0 * stream.uniform(math.prod(shape)) - 1.0) * bound)
        else:
            chunks.append(np.zeros(math.prod(shape)))
    return ParamVector(np.concatenate(chunks), layout)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    batch_size: int
    local_epochs: int = 1
    seed: int = 0
    # When set, run exactly this many mini-batch steps, cycling epochs as needed.
    max_steps: Optional[int] = None

    def __post_init__(self):
        if self.learning_rate < 0:
            raise InvalidValue("train.learning_rate", "must be >= 0")
        if self.batch_size < 1:
            raise InvalidValue("train.batch_size", "must be >= 1")
        if self.local_epochs < 1:
            raise InvalidValue("train.local_epochs", "must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise InvalidValue("train.local_steps", "must be >= 1")


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    loss: float
    n_samples: int


# -- forward / backward ----------------------------------------------------------


def _layers(params: ParamVector) -> list[tuple[np.ndarray, np.ndarray]]:
    tensors = [t for _, t in params.tensors()]
    if len(tensors) % 2:
        raise LayoutMismatch("layout must consist of (weight, bias) pairs")
    return [(tensors[i], tensors[i + 1]) for i in range(0, len(tensors), 2)]


def forward(params: ParamVector, X: np.ndarray) -> np.ndarray:
    """Logits for a batch ``X`` of shape (n, d)."""
    layers = _layers(params)
    h = X
    for i, (W, b) in enumerate(layers):
        h = h @ W.T + b
        if i < len(layers) - 1:
            h = np.tanh(h)
    return h


def _per_sample_nll(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    top = logits.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(logits - top).sum(axis=1))
    nll = lse - logits[np.arange(len(y)), y]
    return np.minimum(nll, _MAX_NLL)


def loss_and_grad(params: ParamVector, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient as a flat array."""
    layers = _layers(params)
    acts = [X]
    h = X
    for i, (W, b) in enumerate(layers):
        h = h @ W.T + b
        if i < len(layers) - 1:
            h = np.tanh(h)
            acts.append(h)
    logits = h
    n = X.shape[0]
    loss = float(_per_sample_nll(logits, y).mean())

    top = logits.max(axis=1, keepdims=True)
    probs = np.exp(logits - top)
    probs /= probs.sum(axis=1, keepdims=True)
    delta = probs
    delta[np.arange(n), y] -= 1.0
    delta /= n

    grads: list[np.ndarray] = []
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        a = acts[i]
        grads.append(delta.sum(axis=0))
        grads.append(delta.T @ a)
        if i > 0:
            delta = (delta @ W) * (1.0 - a * a)
    grads.reverse()
    return loss, np.concatenate([g.reshape(-1) for g in grads])


def evaluate(params: ParamVector, data) -> Metrics:
    if data.n_samples == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    logits = forward(params, data.features)
    pred = logits.argmax(axis=1)
    acc = float(np.count_nonzero(pred == data.labels)) / data.n_samples
    loss = float(_per_sample_nll(logits, data.labels).mean())
    return Metrics(accuracy=acc, loss=loss, n_samples=data.n_samples)


# -- local training --------------------------------------------------------------


StepHook = Callable[[int, ParamVector, np.ndarray], None]


@dataclass
class TrainResult:
    params: ParamVector
    steps: int
    epoch_losses: list[float] = field(default_factory=list)


def batch_order(n: int, cfg: TrainConfig, epoch: int) -> np.ndarray:
    return Stream(cfg.seed, "batches", epoch).permutation(n)


def train_local(
    params: ParamVector,
    data,
    cfg: TrainConfig,
    *,
    correction: Optional[ParamVector] = None,
    on_step: Optional[StepHook] = None,
) -> TrainResult:
    """Mini-batch SGD on cross-entropy.

    ``correction`` is added to every mini-batch gradient (SCAFFOLD uses
    ``server_c - client_c``). ``on_step(step, params_before, grad)`` sees the
    corrected gradient before each update.
    """
    if data.n_samples == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    if correction is not None:
        _check(params, correction)
    layout = params.layout
    w = params.values.copy()
    X, y = data.features, data.labels
    n = data.n_samples
    steps = 0
    epoch_losses = []
    epoch = 0
    while True:
        if cfg.max_steps is None and epoch >= cfg.local_epochs:
            break
        order = batch_order(n, cfg, epoch)
        total, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                break
            idx = order[start : start + cfg.batch_size]
            current = ParamVector(w, layout)
            loss, grad = loss_and_grad(current, X[idx], y[idx])
            if correction is not None:
                grad = grad + correction.values
            if on_step is not None:
                on_step(steps, current, grad)
            w = w - cfg.learning_rate * grad
            steps += 1
            total += loss * len(idx)
            seen += len(idx)
        if seen:
            epoch_losses.append(total / seen)
        epoch += 1
        if cfg.max_steps is not None and steps >= cfg.max_steps:
            break
    return TrainResult(ParamVector(w, layout), steps, epoch_losses)

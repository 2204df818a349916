"""Dataset preparation, client partitioning and the chunk archive.

Built-in datasets are synthetic generators (plus a loader for the chunk file
format below) so everything runs without downloads.

Chunk file layout, all little endian::

    b"FLSC" | u32 version=1 | u64 n | u32 d | u32 n_classes
    n*d float64 features (row major) | n int64 labels

A chunk's digest is the SHA-256 of its file bytes.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import (
    ChunkIntegrityError,
    InvalidValue,
    UnknownDataset,
    UnknownPartitioner,
)
from .registry import Registry
from .rng import Stream

_CHUNK_MAGIC = b"FLSC"
_CHUNK_VERSION = 1
_CHUNK_HEADER = struct.Struct("<4sIQII")


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise InvalidValue("dataset", "features must be (n, d) and labels (n,)")
        if self.n_classes < 1:
            raise InvalidValue("dataset.n_classes", "must be >= 1")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise InvalidValue("dataset.labels", "labels must lie in [0, n_classes)")
        if not np.all(np.isfinite(X)):
            raise InvalidValue("dataset.features", "features must be finite")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n_samples(self) -> int:
        return int(self.labels.size)

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)

    def digest(self) -> str:
        return hashlib.sha256(encode_chunk(self)).hexdigest()


RootDataset = Dataset


# -- dataset generators ----------------------------------------------------------


def standardize(X: np.ndarray) -> np.ndarray:
    """Per-feature zero mean / unit variance with exactly rounded sums."""
    n = X.shape[0]
    out = np.empty_like(X)
    for j in range(X.shape[1]):
        col = X[:, j].tolist()
        mean = math.fsum(col) / n
        centred = X[:, j] - mean
        var = math.fsum((centred * centred).tolist()) / n
        std = math.sqrt(var)
        out[:, j] = centred / std if std > 0 else centred
    return out


def _require_positive(params: Mapping[str, Any], key: str, default: int) -> int:
    value = params.get(key, default)
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise InvalidValue(f"dataset.params.{key}", "must be an integer >= 1")
    return value


def synthetic_blobs(params: Mapping[str, Any], seed: int) -> Dataset:
    """Gaussian clusters, one per class; labels interleave as ``i % k``.

    Centers are ``U(-center_box, center_box)^d`` from stream (seed, "blobs",
    "centers"); noise is ``cluster_std * N(0, 1)`` from (seed, "blobs",
    "noise") in row-major order.
    """
    n = _require_positive(params, "n_samples", 200)
    d = _require_positive(params, "n_features", 2)
    k = _require_positive(params, "n_classes", 2)
    std = float(params.get("cluster_std", 1.0))
    box = float(params.get("center_box", 5.0))
    centers = (2.0 * Stream(seed, "blobs", "centers").uniform(k * d) - 1.0) * box
    centers = centers.reshape(k, d)
    labels = np.arange(n, dtype=np.int64) % k
    noise = Stream(seed, "blobs", "noise").normal(n * d).reshape(n, d)
    X = centers[labels] + std * noise
    return Dataset(standardize(X), labels, k)


def synthetic_linear(params: Mapping[str, Any], seed: int) -> Dataset:
    """Standard-normal features labelled by a random linear teacher (argmax)."""
    n = _require_positive(params, "n_samples", 500)
    d = _require_positive(params, "n_features", 10)
    k = _require_positive(params, "n_classes", 2)
    X = Stream(seed, "linear", "features").normal(n * d).reshape(n, d)
    teacher = Stream(seed, "linear", "teacher").normal(k * d).reshape(k, d)
    labels = (X @ teacher.T).argmax(axis=1)
    return Dataset(standardize(X), labels, k)


def mnist_like(params: Mapping[str, Any], seed: int) -> Dataset:
    """Load a dataset stored in the chunk file format; ``scale`` divides features."""
    path = params.get("path")
    if not path:
        raise InvalidValue("dataset.params.path", "mnist-like needs a file path")
    ds = decode_chunk(Path(path).read_bytes())
    scale = float(params.get("scale", 1.0))
    if scale != 1.0:
        ds = Dataset(ds.features / scale, ds.labels, ds.n_classes)
    return ds


DATASETS: Registry[Callable[[Mapping[str, Any], int], Dataset]] = Registry(
    "dataset", UnknownDataset
)
DATASETS.register("synthetic-blobs", synthetic_blobs)
DATASETS.register("synthetic-linear", synthetic_linear)
DATASETS.register("mnist-like", mnist_like)


def prepare_root_dataset(spec, seed: int) -> Dataset:
    """Build the root dataset named by ``spec.name`` with ``spec.params``."""
    generator = DATASETS.lookup(spec.name)
    params = dict(spec.params)
    if "n_samples" in params and params["n_samples"] == 0:
        raise InvalidValue("dataset.params.n_samples", "must be >= 1")
    return generator(params, seed)


# -- manifests and partitioners --------------------------------------------------


def index_digest(indices: Sequence[int]) -> str:
    return hashlib.sha256(np.asarray(indices, dtype="<i8").tobytes()).hexdigest()


@dataclass(frozen=True)
class ChunkManifest:
    chunks: Mapping[str, tuple[int, ...]]
    partitioner: str
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0
    digests: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        chunks = {k: tuple(int(i) for i in v) for k, v in self.chunks.items()}
        object.__setattr__(self, "chunks", chunks)
        object.__setattr__(self, "params", dict(self.params))
        object.__setattr__(self, "digests", {k: index_digest(v) for k, v in chunks.items()})

    def sizes(self) -> dict[str, int]:
        return {k: len(v) for k, v in self.chunks.items()}

    def digest(self) -> str:
        doc = {
            "chunks": {k: list(v) for k, v in sorted(self.chunks.items())},
            "params": self.params,
            "partitioner": self.partitioner,
            "seed": self.seed,
        }
        text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def is_complete(self, n_samples: int) -> bool:
        """Chunks are pairwise disjoint and cover exactly ``0..n_samples-1``."""
        seen = [i for chunk in self.chunks.values() for i in chunk]
        return len(seen) == n_samples and sorted(seen) == list(range(n_samples))


def _even_split(indices: Sequence[int], client_ids: Sequence[str]) -> dict[str, tuple[int, ...]]:
    n, k = len(indices), len(client_ids)
    base, extra = divmod(n, k)
    out, pos = {}, 0
    for i, cid in enumerate(client_ids):
        size = base + (1 if i < extra else 0)
        out[cid] = tuple(int(v) for v in indices[pos : pos + size])
        pos += size
    return out


def iid_partition(n_samples: int, client_ids: Sequence[str], seed: int) -> ChunkManifest:
    """Shuffle ``0..n-1`` with stream (seed, "iid") and cut near-equal contiguous blocks.

    The first ``n % k`` clients (in the given order) get one extra sample.
    """
    if not client_ids:
        raise InvalidValue("client_ids", "need at least one client")
    perm = Stream(seed, "iid").permutation(n_samples)
    return ChunkManifest(_even_split(perm, client_ids), "iid", {}, seed)


def largest_remainder(proportions: Sequence[float], total: int) -> list[int]:
    """Integer counts summing to ``total``; leftovers go to the largest fractional parts."""
    raw = [p * total for p in proportions]
    counts = [math.floor(r) for r in raw]
    short = total - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts


def dirichlet_partition(
    labels: Sequence[int], client_ids: Sequence[str], alpha: float, seed: int
) -> ChunkManifest:
    """Per-class Dirichlet split.

    For each class ``c`` in ascending order: shuffle the class's indices with
    stream (seed, "dirichlet", c, "shuffle"), draw proportions over clients from
    Dir(alpha) with stream (seed, "dirichlet", c, "proportions"), convert to
    counts by largest remainder and hand out consecutive blocks in client order.
    """
    if not alpha > 0:
        raise InvalidValue("alpha", "must be > 0")
    if not client_ids:
        raise InvalidValue("client_ids", "need at least one client")
    labels = np.asarray(labels, dtype=np.int64)
    buckets: dict[str, list[int]] = {cid: [] for cid in client_ids}
    for c in np.unique(labels).tolist():
        members = np.flatnonzero(labels == c)
        members = members[Stream(seed, "dirichlet", c, "shuffle").permutation(members.size)]
        props = Stream(seed, "dirichlet", c, "proportions").dirichlet(alpha, len(client_ids))
        counts = largest_remainder(props, members.size)
        pos = 0
        for cid, count in zip(client_ids, counts):
            buckets[cid].extend(int(v) for v in members[pos : pos + count])
            pos += count
    return ChunkManifest(buckets, "dirichlet", {"alpha": alpha}, seed)


def _iid_from_dataset(ds: Dataset, client_ids, params, seed) -> ChunkManifest:
    return iid_partition(ds.n_samples, client_ids, seed)


def _dirichlet_from_dataset(ds: Dataset, client_ids, params, seed) -> ChunkManifest:
    alpha = params.get("alpha", 0.5)
    if isinstance(alpha, bool) or not isinstance(alpha, (int, float)):
        raise InvalidValue("dataset.partitioner_params.alpha", "must be a number")
    return dirichlet_partition(ds.labels, client_ids, float(alpha), seed)


PARTITIONERS: Registry[Callable[..., ChunkManifest]] = Registry(
    "partitioner", UnknownPartitioner
)
PARTITIONERS.register("iid", _iid_from_dataset)
PARTITIONERS.register("dirichlet", _dirichlet_from_dataset)


def distribute_into_chunks(
    name: str, ds: Dataset, client_ids: Sequence[str], params: Mapping[str, Any], seed: int
) -> ChunkManifest:
    return PARTITIONERS.lookup(name)(ds, list(client_ids), dict(params), seed)


# -- per-client preprocessing ----------------------------------------------------


def split_sizes(n: int, train_fraction: float) -> tuple[int, int]:
    if not 0.0 < train_fraction < 1.0:
        raise InvalidValue("dataset.train_fraction", "must lie strictly between 0 and 1")
    if n == 0:
        raise InvalidValue("chunk", "cannot split an empty chunk")
    if n == 1:
        return 1, 0
    n_train = min(max(int(round(n * train_fraction)), 1), n - 1)
    return n_train, n - n_train


def preprocess_chunk(root: Dataset, indices: Sequence[int], train_fraction: float):
    """Split a chunk into (train, test) keeping the chunk's index order.

    The first ``round(n * train_fraction)`` indices train, the rest test; both
    sides keep at least one sample when ``n >= 2``. A single-sample chunk is
    train only.
    """
    n_train, _ = split_sizes(len(indices), train_fraction)
    idx = list(indices)
    return root.subset(idx[:n_train]), root.subset(idx[n_train:])


# -- chunk archive ---------------------------------------------------------------


def encode_chunk(ds: Dataset) -> bytes:
    header = _CHUNK_HEADER.pack(
        _CHUNK_MAGIC, _CHUNK_VERSION, ds.n_samples, ds.n_features, ds.n_classes
    )
    return header + ds.features.astype("<f8").tobytes() + ds.labels.astype("<i8").tobytes()


def decode_chunk(data: bytes) -> Dataset:
    magic, version, n, d, k = _CHUNK_HEADER.unpack_from(data, 0)
    if magic != _CHUNK_MAGIC or version != _CHUNK_VERSION:
        raise ValueError("not a chunk file")
    pos = _CHUNK_HEADER.size
    X = np.frombuffer(data, dtype="<f8", count=n * d, offset=pos).reshape(n, d)
    y = np.frombuffer(data, dtype="<i8", count=n, offset=pos + 8 * n * d)
    return Dataset(X.astype(np.float64), y.astype(np.int64), k)


class ChunkArchive:
    """Encoded per-node chunks with content digests; the Dataset Distributor's store."""

    def __init__(self, root: Dataset, manifest: ChunkManifest):
        self.manifest = manifest
        self.n_classes = root.n_classes
        self.n_features = root.n_features
        self._blobs: dict[str, bytes] = {}
        self.digests: dict[str, str] = {}
        for node, idx in sorted(manifest.chunks.items()):
            blob = encode_chunk(root.subset(idx))
            self._blobs[node] = blob
            self.digests[node] = hashlib.sha256(blob).hexdigest()

    def nodes(self) -> list[str]:
        return sorted(self._blobs)

    def download(self, node: str) -> Dataset:
        blob = self._blobs[node]
        if hashlib.sha256(blob).hexdigest() != self.digests[node]:
            raise ChunkIntegrityError(f"chunk for {node!r} does not match its digest")
        return decode_chunk(blob)

    def write(self, directory: str | Path) -> dict[str, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {}
        for node, blob in self._blobs.items():
            path = directory / f"{node}.chunk"
            path.write_bytes(blob)
            paths[node] = path
        return paths


def read_chunk(path: str | Path, expected_digest: str | None = None) -> Dataset:
    blob = Path(path).read_bytes()
    if expected_digest is not None and hashlib.sha256(blob).hexdigest() != expected_digest:
        raise ChunkIntegrityError(f"{path} does not match its digest")
    return decode_chunk(blob)

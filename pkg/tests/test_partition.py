import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flsim.errors import ChunkIntegrityError, InvalidValue, UnknownDataset, UnknownPartitioner
from flsim.jobconfig import DatasetSpec
from flsim.partition import (
    ChunkArchive,
    Dataset,
    decode_chunk,
    dirichlet_partition,
    distribute_into_chunks,
    encode_chunk,
    iid_partition,
    largest_remainder,
    prepare_root_dataset,
    preprocess_chunk,
    read_chunk,
    split_sizes,
    standardize,
    synthetic_blobs,
)
from flsim.rng import Stream

from oracles import RefStream, key_for, reference_dirichlet_manifest


def clients(k):
    return [f"c{i:03d}" for i in range(k)]


# -- root datasets -------------------------------------------------------------------


def test_blobs_match_documented_construction():
    ds = synthetic_blobs({"n_samples": 12, "n_features": 2, "n_classes": 3, "cluster_std": 0.5}, 4)
    cs, ns = RefStream(key_for(4, "blobs", "centers")), RefStream(key_for(4, "blobs", "noise"))
    centers = [[(2 * cs.unif() - 1) * 5.0 for _ in range(2)] for _ in range(3)]
    raw = [[centers[i % 3][j] + 0.5 * ns.gauss() for j in range(2)] for i in range(12)]
    assert ds.labels.tolist() == [i % 3 for i in range(12)]
    assert np.array_equal(ds.features, standardize(np.array(raw)))


def test_standardize_gives_zero_mean_unit_variance():
    X = Stream(1, "s").normal(300).reshape(100, 3) * 7 + 2
    Z = standardize(X)
    assert np.allclose(Z.mean(axis=0), 0, atol=1e-12)
    assert np.allclose(Z.std(axis=0), 1, atol=1e-12)
    const = standardize(np.ones((4, 1)))
    assert not const.any()


def test_prepare_root_dataset_registry_and_bounds():
    ds = prepare_root_dataset(DatasetSpec("synthetic-linear", {"n_samples": 50, "n_features": 4}), 0)
    assert ds.n_samples == 50 and ds.n_features == 4
    with pytest.raises(UnknownDataset):
        prepare_root_dataset(DatasetSpec("cifar-10"), 0)
    with pytest.raises(InvalidValue):
        prepare_root_dataset(DatasetSpec("synthetic-blobs", {"n_samples": 0}), 0)


def test_dataset_validation():
    with pytest.raises(InvalidValue):
        Dataset(np.zeros((2, 2)), np.array([0, 5]), 2)
    with pytest.raises(InvalidValue):
        Dataset(np.zeros((2, 2)), np.array([0]), 2)


def test_mnist_like_reads_chunk_file(tmp_path):
    ds = Dataset(np.arange(6.0).reshape(3, 2) * 255, np.array([0, 1, 1]), 2)
    path = tmp_path / "d.chunk"
    path.write_bytes(encode_chunk(ds))
    out = prepare_root_dataset(DatasetSpec("mnist-like", {"path": str(path), "scale": 255.0}), 0)
    assert np.array_equal(out.features, np.arange(6.0).reshape(3, 2))


# -- partitioners --------------------------------------------------------------------


def test_iid_matches_reference_shuffle_and_sizes():
    m = iid_partition(10, clients(3), 5)
    perm = RefStream(key_for(5, "iid")).perm(10)
    assert m.chunks == {"c000": tuple(perm[:4]), "c001": tuple(perm[4:7]), "c002": tuple(perm[7:])}
    assert m.is_complete(10)


@given(st.integers(0, 500), st.integers(1, 30), st.integers(0, 2**31))
@settings(max_examples=100, deadline=None)
def test_iid_is_disjoint_complete_and_balanced(n, k, seed):
    m = iid_partition(n, clients(k), seed)
    assert m.is_complete(n)
    sizes = list(m.sizes().values())
    assert max(sizes) - min(sizes) <= 1


def test_largest_remainder():
    assert largest_remainder([0.5, 0.25, 0.25], 7) == [3, 2, 2]
    assert largest_remainder([0.6, 0.2, 0.2], 7) == [4, 2, 1]
    assert largest_remainder([1 / 3] * 3, 2) == [1, 1, 0]
    assert sum(largest_remainder([0.1] * 10, 13)) == 13


def test_dirichlet_matches_reference_sampler():
    labels = [i % 4 for i in range(97)]
    m = dirichlet_partition(labels, clients(6), 0.5, 3)
    ref = reference_dirichlet_manifest(labels, clients(6), 0.5, 3)
    assert {k: list(v) for k, v in m.chunks.items()} == ref


@given(
    st.lists(st.integers(0, 4), min_size=0, max_size=300),
    st.integers(1, 20),
    st.floats(0.01, 1000.0),
    st.integers(0, 2**31),
)
@settings(max_examples=100, deadline=None)
def test_dirichlet_is_disjoint_complete(labels, k, alpha, seed):
    m = dirichlet_partition(labels, clients(k), alpha, seed)
    assert m.is_complete(len(labels))
    for cid, idx in m.chunks.items():
        assert m.digests[cid] == hashlib.sha256(np.asarray(idx, dtype="<i8").tobytes()).hexdigest()


def test_dirichlet_huge_alpha_is_near_uniform():
    labels = np.repeat([0, 1], 1000)
    m = dirichlet_partition(labels, ["a", "b"], 10_000.0, 1)
    for cid, idx in m.chunks.items():
        share = np.count_nonzero(labels[list(idx)] == 0) / 1000
        assert 0.45 <= share <= 0.55


def test_dirichlet_small_alpha_is_skewed():
    labels = np.repeat(np.arange(5), 200)
    m = dirichlet_partition(labels, clients(10), 0.05, 2)
    top_share = []
    for idx in m.chunks.values():
        if idx:
            counts = np.bincount(labels[list(idx)], minlength=5)
            top_share.append(counts.max() / counts.sum())
    assert np.mean(top_share) > 0.7


def test_partition_errors():
    with pytest.raises(InvalidValue):
        dirichlet_partition([0, 1], ["a"], 0.0, 1)
    with pytest.raises(InvalidValue):
        iid_partition(3, [], 1)
    ds = synthetic_blobs({"n_samples": 10}, 0)
    with pytest.raises(UnknownPartitioner):
        distribute_into_chunks("shards", ds, ["a"], {}, 0)


def test_manifest_digest_is_stable():
    a = iid_partition(20, clients(3), 1)
    b = iid_partition(20, clients(3), 1)
    assert a.digest() == b.digest()
    assert a.digest() != iid_partition(20, clients(3), 2).digest()


# -- preprocessing and archive -------------------------------------------------------


def test_split_sizes_rules():
    assert split_sizes(10, 0.8) == (8, 2)
    assert split_sizes(2, 0.99) == (1, 1)
    assert split_sizes(2, 0.01) == (1, 1)
    assert split_sizes(1, 0.8) == (1, 0)
    with pytest.raises(InvalidValue):
        split_sizes(0, 0.8)
    with pytest.raises(InvalidValue):
        split_sizes(5, 1.0)


def test_preprocess_keeps_index_order():
    root = synthetic_blobs({"n_samples": 20}, 0)
    train, test = preprocess_chunk(root, [5, 3, 9, 1, 0], 0.6)
    assert np.array_equal(train.features, root.features[[5, 3, 9]])
    assert np.array_equal(test.labels, root.labels[[1, 0]])


def test_chunk_codec_round_trip(tmp_path):
    root = synthetic_blobs({"n_samples": 30, "n_features": 3, "n_classes": 3}, 1)
    m = iid_partition(30, ["a", "b"], 0)
    archive = ChunkArchive(root, m)
    paths = archive.write(tmp_path)
    for node, path in paths.items():
        ds = read_chunk(path, archive.digests[node])
        assert np.array_equal(ds.features, root.features[list(m.chunks[node])])
        assert ds.n_classes == 3
    blob = paths["a"].read_bytes()
    paths["a"].write_bytes(blob[:-1] + bytes([blob[-1] ^ 1]))
    with pytest.raises(ChunkIntegrityError):
        read_chunk(paths["a"], archive.digests["a"])
    assert decode_chunk(encode_chunk(root)).digest() == root.digest()


def test_archive_detects_tampering():
    root = synthetic_blobs({"n_samples": 10}, 0)
    archive = ChunkArchive(root, iid_partition(10, ["a"], 0))
    archive._blobs["a"] = archive._blobs["a"][:-1] + b"\x01"
    with pytest.raises(ChunkIntegrityError):
        archive.download("a")

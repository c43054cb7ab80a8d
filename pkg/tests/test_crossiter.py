import json

import numpy as np
import pytest

from underclust.crossiter import (
    ClusterState,
    cross_iterative_cluster,
    merge_normal_clusters,
    pseudo_labeled_training_set,
)
from underclust.dataset import EmbeddingSet
from underclust.kernel import compute_sigma, median_pairwise_sq_dist, rbf_kernel_matrix
from underclust.metrics import per_cluster_quality
from underclust.tsne import Embedding2D


def kernel_of(points, k, beta):
    sigma = compute_sigma(median_pairwise_sq_dist(points), k, len(points), beta).sigma
    return rbf_kernel_matrix(points, sigma)


def blobs_2d(rng, sizes, spread=0.3, scale=20.0):
    pts, labels = [], []
    for c, size in enumerate(sizes):
        center = rng.normal(0, scale, size=2)
        pts.append(rng.normal(0, spread, size=(size, 2)) + center)
        labels += [c] * size
    order = rng.permutation(len(labels))
    return np.vstack(pts)[order], np.asarray(labels)[order]


def test_two_blob_single_pass(rng):
    pts, _ = blobs_2d(rng, [30, 10], scale=30.0)
    z = kernel_of(pts, 2, 1)
    state = cross_iterative_cluster(z, k=2, beta=1, seed=0)
    assert state.h == 1
    assert state.abnormal.size + state.normal_pool[0].size == 40
    state.check_partition()


def test_partition_conservation_over_seeds(rng):
    pts, _ = blobs_2d(rng, [20, 20, 20], scale=15.0)
    z = kernel_of(pts, 5, 2)
    for seed in range(100):
        state = cross_iterative_cluster(z, k=5, beta=2, seed=seed)
        total = state.abnormal.size + sum(g.size for g in state.normal_pool)
        assert total == 60
        state.check_partition()


def test_pool_size_without_early_stop(rng):
    pts, _ = blobs_2d(rng, [100] * 5, scale=25.0)
    z = kernel_of(pts, 5, 3)
    state = cross_iterative_cluster(z, k=5, beta=3, seed=1)
    assert state.early_stop is None
    assert state.h == (5 - 1) * 3


def test_abnormal_is_max_size_each_iteration(rng):
    pts, _ = blobs_2d(rng, [80, 60, 60], scale=20.0)
    z = kernel_of(pts, 4, 2)
    state = cross_iterative_cluster(z, k=4, beta=2, seed=3)
    for t in state.trace:
        assert t.abnormal_size == max(t.cluster_sizes)


def test_early_stop_recorded(rng):
    pts, _ = blobs_2d(rng, [12, 12], scale=20.0)
    z = kernel_of(pts, 5, 4)
    # 24 points, k=5: the abnormal set dips below 2k quickly
    state = cross_iterative_cluster(z, k=5, beta=4, seed=0)
    assert state.early_stop is not None
    assert state.h < (5 - 1) * 4
    state.check_partition()


def test_degenerate_kernel_rejected():
    z = kernel_of(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.5], [0.5, 2.0]]), 2, 1)
    z.z[:] = 1.0  # all rows identical
    with pytest.raises(ValueError, match="iteration 1"):
        cross_iterative_cluster(z, k=2, beta=1, seed=0)


def test_preconditions(rng):
    pts, _ = blobs_2d(rng, [10, 10])
    z = kernel_of(pts, 2, 1)
    with pytest.raises(ValueError):
        cross_iterative_cluster(z, k=1, beta=1, seed=0)
    with pytest.raises(ValueError):
        cross_iterative_cluster(z, k=2, beta=0, seed=0)
    with pytest.raises(ValueError):
        cross_iterative_cluster(z, k=20, beta=1, seed=0)


def test_trace_file(tmp_path, rng):
    pts, _ = blobs_2d(rng, [40, 40], scale=25.0)
    z = kernel_of(pts, 3, 2)
    state = cross_iterative_cluster(z, k=3, beta=2, seed=0)
    path = tmp_path / "trace.jsonl"
    state.write_trace(path)
    rows = [json.loads(ln) for ln in path.read_text().splitlines()]
    assert [r["iteration"] for r in rows] == [t.iteration for t in state.trace]
    assert all(r["abnormal_size"] == max(r["cluster_sizes"]) for r in rows)


# -- merging ------------------------------------------------------------------


def manual_state(groups, n):
    pool = [np.asarray(g, dtype=np.int64) for g in groups]
    used = np.concatenate(pool)
    abnormal = np.setdiff1d(np.arange(n, dtype=np.int64), used)
    return ClusterState(pool, abnormal, n)


def test_merge_forced_two_groups():
    # normal-cluster centroids (0,0), (0.1,0), (5,5), (5.1,5) -> {1,2} and {3,4}
    points = np.array(
        [[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0], [9.0, 9.0]], dtype=np.float64
    )
    x2 = Embedding2D(points, [])
    state = manual_state([[0], [1], [2], [3]], 5)
    merged = merge_normal_clusters(state, x2, 2, seed=0)
    groups = {tuple(sorted(g.tolist())) for g in merged.merged}
    assert groups == {(0, 1), (2, 3)}
    assert merged.pseudo_labels == ["M_1", "M_2"]
    assert merged.centroid_set.shape == (4, 2)


def test_merge_m_equals_h_is_identity(rng):
    points = rng.normal(size=(12, 2)) * 10
    x2 = Embedding2D(points, [])
    state = manual_state([[0, 1], [2, 3], [4, 5], [6, 7]], 12)
    merged = merge_normal_clusters(state, x2, 4, seed=0)
    got = {tuple(g.tolist()) for g in merged.merged}
    want = {tuple(g.tolist()) for g in state.normal_pool}
    assert got == want


def test_merge_member_conservation(rng):
    for seed in range(10):
        pts, _ = blobs_2d(rng, [30, 30, 30], scale=20.0)
        z = kernel_of(pts, 4, 2)
        state = cross_iterative_cluster(z, k=4, beta=2, seed=seed)
        x2 = Embedding2D(pts, [])
        m = min(3, state.h)
        merged = merge_normal_clusters(state, x2, m, seed=seed)
        assert sum(g.size for g in merged.merged) == sum(g.size for g in state.normal_pool)
        merged.check_partition()


def test_merge_requires_m_at_most_h(rng):
    points = rng.normal(size=(6, 2))
    state = manual_state([[0, 1], [2, 3]], 6)
    with pytest.raises(ValueError, match="m"):
        merge_normal_clusters(state, Embedding2D(points, []), 3, seed=0)


# -- training set ---------------------------------------------------------------


def make_embedding_set(n, d=4, seed=0):
    rng = np.random.default_rng(seed)
    return EmbeddingSet([f"x{i}" for i in range(n)], rng.normal(size=(n, d)).astype(np.float32))


def test_training_set_direct_mapping():
    e = make_embedding_set(5)
    points = np.random.default_rng(0).normal(size=(5, 2))
    state = manual_state([[1, 2], [3]], 5)
    state = merge_normal_clusters(state, Embedding2D(points, []), 2, seed=0)
    train = pseudo_labeled_training_set(state, e)
    assert train.n == 3
    by_id = dict(zip(train.ids, train.labels))
    label_of = {}
    for lab, g in zip(state.pseudo_labels, state.merged):
        for i in g:
            label_of[f"x{i}"] = lab
    assert by_id == label_of
    assert len(set(train.labels)) == 2


def test_training_set_size_is_n_minus_abnormal(rng):
    pts, _ = blobs_2d(rng, [40, 40], scale=25.0)
    e = EmbeddingSet([f"s{i}" for i in range(80)], pts.astype(np.float32))
    z = kernel_of(pts, 3, 2)
    state = cross_iterative_cluster(z, k=3, beta=2, seed=0)
    state = merge_normal_clusters(state, Embedding2D(pts, []), 2, seed=0)
    train = pseudo_labeled_training_set(state, e)
    assert train.n == 80 - state.abnormal.size
    assert set(train.labels) == set(state.pseudo_labels)


def test_training_set_requires_merge(rng):
    state = manual_state([[0, 1]], 4)
    with pytest.raises(ValueError, match="merge"):
        pseudo_labeled_training_set(state, make_embedding_set(4))


# -- under-clustering purity (module-scale version) -------------------------------


def test_under_clusters_are_pure(rng):
    pts, labels = blobs_2d(rng, [50] * 4, spread=0.4, scale=25.0)
    z = kernel_of(pts, 8, 2)
    pure_runs = 0
    for seed in range(10):
        state = cross_iterative_cluster(z, k=8, beta=2, seed=seed)
        flat_pred = np.full(200, -1)
        for g_idx, g in enumerate(state.normal_pool):
            flat_pred[g] = g_idx
        mask = flat_pred >= 0
        acc, *_ = per_cluster_quality(flat_pred[mask], labels[mask])
        pure_runs += min(acc) >= 0.95
    assert pure_runs >= 9

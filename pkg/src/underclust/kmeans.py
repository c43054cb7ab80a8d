"""K-means++ seeding and Lloyd iterations over arbitrary real vector sets.

Deterministic given a seed. Ties in nearest-centroid assignment break toward
the lower centroid index; empty clusters are repaired by re-seeding from the
point currently farthest from its assigned centroid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._accel import nearest_centroids


@dataclass
class ClusterAssignment:
    labels: np.ndarray          # (N,) int64 in [0, k)
    centroids: np.ndarray       # (k, m) float64
    inertia: float
    iterations_run: int
    inertia_trace: list


def kmeanspp_seed(v: np.ndarray, k: int, seed) -> np.ndarray:
    """Choose k initial centroids: first uniform, then proportional to the
    squared distance to the nearest already-chosen centroid.

    Runs of duplicated points surface as exhausted probability mass, which
    means fewer distinct vectors than k.
    """
    v = np.ascontiguousarray(v, dtype=np.float64)
    n = v.shape[0]
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if n < k:
        raise ValueError(f"cannot seed {k} centroids from {n} points")
    rng = np.random.default_rng(seed)
    row_sq = np.einsum("ij,ij->i", v, v)
    centroids = np.empty((k, v.shape[1]))
    centroids[0] = v[rng.integers(n)]
    d2 = np.maximum(row_sq - 2.0 * (v @ centroids[0]) + centroids[0] @ centroids[0], 0.0)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            raise ValueError(f"fewer than {k} distinct vectors")
        idx = rng.choice(n, p=d2 / total)
        centroids[j] = v[idx]
        step = np.maximum(row_sq - 2.0 * (v @ centroids[j]) + centroids[j] @ centroids[j], 0.0)
        np.minimum(d2, step, out=d2)
    return centroids


def lloyd(v: np.ndarray, init: np.ndarray, max_iters: int = 300, tol: float = 1e-6) -> ClusterAssignment:
    """Alternate assignment and mean updates until the largest centroid
    shift drops below `tol` or `max_iters` is reached."""
    v = np.ascontiguousarray(v, dtype=np.float64)
    centroids = np.array(init, dtype=np.float64, copy=True)
    k = centroids.shape[0]
    trace = []
    iterations = 0
    for iterations in range(1, max_iters + 1):
        labels, sq = nearest_centroids(v, centroids)
        trace.append(float(sq.sum()))
        counts = np.bincount(labels, minlength=k)
        # scatter-add via one-hot matmul; far faster than np.add.at
        onehot = (labels[None, :] == np.arange(k)[:, None]).astype(np.float64)
        new_centroids = onehot @ v
        nonzero = counts > 0
        new_centroids[nonzero] /= counts[nonzero, None]
        for j in np.flatnonzero(~nonzero):
            # farthest point from its centroid becomes the new seed
            far = int(np.argmax(sq))
            new_centroids[j] = v[far]
            sq[far] = 0.0
        shift = np.sqrt(np.max(np.sum((new_centroids - centroids) ** 2, axis=1)))
        centroids = new_centroids
        if shift < tol:
            break
    labels, sq = nearest_centroids(v, centroids)
    inertia = float(sq.sum())
    trace.append(inertia)
    return ClusterAssignment(labels, centroids, inertia, iterations, trace)


def kmeans(v: np.ndarray, k: int, seed, max_iters: int = 300, tol: float = 1e-6) -> ClusterAssignment:
    init = kmeanspp_seed(v, k, seed)
    return lloyd(v, init, max_iters=max_iters, tol=tol)


def default_cluster_count(n: int) -> int:
    """Default per-pass cluster count, about twice the square root of N."""
    return max(2, round(2.0 * np.sqrt(n)))

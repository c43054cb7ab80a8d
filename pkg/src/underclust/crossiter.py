"""Cross-iterative under-clustering over kernelized vectors.

Each pass k-means++-clusters the rows of the kernel matrix restricted to the
current abnormal set, keeps the k-1 smaller clusters as "normal" (small,
high-purity) clusters, and carries the largest cluster forward as the next
abnormal set. Harvested normal clusters are then merged by k-means over
their 2-D centroids and pseudo-labeled M_1..M_m; the abnormal remainder is
left for the classification stage.

The kernel matrix is computed once up front; passes never re-kernelize the
shrinking abnormal set, they only take row subsets (columns keep all N
dimensions).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import EmbeddingSet
from .kernel import KernelMatrix
from .kmeans import kmeans
from .tsne import Embedding2D

#: stop iterating when the abnormal set is smaller than this multiple of k
MIN_ABNORMAL_FACTOR = 2


@dataclass
class IterationTrace:
    iteration: int
    cluster_sizes: list
    abnormal_size: int


@dataclass
class ClusterState:
    normal_pool: list                     # list of int64 index arrays (G_1..G_h)
    abnormal: np.ndarray                  # int64 indices of the final abnormal set
    n: int
    merged: list | None = None            # list of int64 index arrays (M_1..M_m)
    pseudo_labels: list | None = None     # "M_1".. aligned with merged
    centroid_set: np.ndarray | None = None  # (h, 2) per-normal-cluster 2-D centroids
    trace: list = field(default_factory=list)
    early_stop: str | None = None

    @property
    def h(self) -> int:
        return len(self.normal_pool)

    def check_partition(self) -> None:
        """Normal pool plus abnormal must partition {0..N-1}; merged, when
        present, must partition exactly the union of the normal pool."""
        parts = [g for g in self.normal_pool] + [self.abnormal]
        flat = np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
        if flat.size != self.n or np.unique(flat).size != self.n:
            raise AssertionError("normal pool and abnormal set do not partition the dataset")
        if self.merged is not None:
            got = np.sort(np.concatenate(self.merged)) if self.merged else np.empty(0, np.int64)
            want = np.sort(np.concatenate(self.normal_pool))
            if got.size != want.size or not np.array_equal(got, want):
                raise AssertionError("merged clusters do not partition the normal pool")

    def write_trace(self, path) -> None:
        """Dump the per-pass trace as JSON lines."""
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.trace:
                fh.write(
                    json.dumps(
                        {
                            "iteration": t.iteration,
                            "cluster_sizes": t.cluster_sizes,
                            "abnormal_size": t.abnormal_size,
                        }
                    )
                    + "\n"
                )


def cross_iterative_cluster(
    z: KernelMatrix,
    k: int,
    beta: int,
    seed,
    kmeans_max_iters: int = 300,
) -> ClusterState:
    """Run `beta` under-clustering passes over the kernel rows.

    Stops early (recording the reason) once the abnormal set drops below
    MIN_ABNORMAL_FACTOR * k members. Ties for the largest cluster break
    toward the lower cluster index.
    """
    n = z.n
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if beta < 1:
        raise ValueError(f"beta must be >= 1, got {beta}")
    if n <= k:
        raise ValueError(f"need more points than clusters, got N={n}, k={k}")

    seeds = np.random.SeedSequence(seed).spawn(beta)
    active = np.arange(n, dtype=np.int64)
    pool: list[np.ndarray] = []
    trace: list[IterationTrace] = []
    early_stop = None
    for it in range(1, beta + 1):
        if active.size < MIN_ABNORMAL_FACTOR * k:
            early_stop = (
                f"abnormal set has {active.size} members < {MIN_ABNORMAL_FACTOR * k} "
                f"at iteration {it}"
            )
            break
        rows = z.z[active]
        try:
            result = kmeans(rows, k, seeds[it - 1], max_iters=kmeans_max_iters)
        except ValueError as exc:
            raise ValueError(f"iteration {it}: degenerate kernel rows ({exc})") from exc
        sizes = np.bincount(result.labels, minlength=k)
        largest = int(np.argmax(sizes))  # argmax takes the lowest index on ties
        trace.append(IterationTrace(it, [int(s) for s in sizes], int(sizes[largest])))
        for j in range(k):
            if j != largest and sizes[j] > 0:
                pool.append(active[result.labels == j])
        active = active[result.labels == largest]
    state = ClusterState(pool, active, n, trace=trace, early_stop=early_stop)
    state.check_partition()
    return state


def merge_normal_clusters(state: ClusterState, x2: Embedding2D, m: int, seed) -> ClusterState:
    """Merge the normal pool into m pseudo-labeled clusters.

    Each normal cluster's centroid is the mean of its members' 2-D
    coordinates; k-means over those centroids groups whole clusters, and the
    unions get pseudo-labels "M_1".."M_m" in centroid-cluster index order.
    """
    h = state.h
    if not 1 <= m <= h:
        raise ValueError(f"need 1 <= m <= h, got m={m} with h={h} normal clusters")
    centroids = np.stack([x2.points[g].mean(axis=0) for g in state.normal_pool])
    result = kmeans(centroids, m, seed)
    merged = []
    labels = []
    for j in range(m):
        members = [state.normal_pool[i] for i in np.flatnonzero(result.labels == j)]
        if not members:
            continue
        merged.append(np.sort(np.concatenate(members)))
        labels.append(f"M_{len(merged)}")
    new_state = replace(
        state, merged=merged, pseudo_labels=labels, centroid_set=centroids
    )
    new_state.check_partition()
    return new_state


def pseudo_labeled_training_set(state: ClusterState, e: EmbeddingSet) -> EmbeddingSet:
    """Subset of `e` covered by the merged clusters, labeled M_1..M_m.

    Abnormal members are excluded; rows keep their original relative order.
    """
    if not state.merged:
        raise ValueError("no merged clusters; run merge_normal_clusters first")
    label_of = {}
    for lab, members in zip(state.pseudo_labels, state.merged):
        for i in members:
            label_of[int(i)] = lab
    indices = np.sort(np.concatenate(state.merged))
    return e.subset(indices, labels=[label_of[int(i)] for i in indices])

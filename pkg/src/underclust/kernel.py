"""Bandwidth schedule and RBF Gram matrix over the 2-D layout.

The Gram entry for points i, j is exp(-||x_i - x_j||^2 / (2 sigma^2)), so
rows of the matrix are N-dimensional kernelized vectors. The bandwidth
controls how aggressively the kernelization separates points: a small sigma
pushes even similar points apart (entries toward 0), a large sigma gathers
even dissimilar ones (entries toward 1). The default schedule ties sigma to
the data's median squared pairwise distance, shrunk by ln(k)/(ln(N)*beta)
so that more passes (beta) or fewer clusters per pass (k) sharpen the
kernel. A plain sqrt(N)-scaled median is kept as an alternative schedule.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ._accel import pairwise_sq_dists

#: smallest positive normal double; zero kernel entries are flushed up to it
_TINY = float(np.finfo(np.float64).tiny)


@dataclass(frozen=True)
class SigmaSchedule:
    median_sq_dist: float
    k: int
    n: int
    beta: int
    sigma: float


@dataclass
class KernelMatrix:
    z: np.ndarray            # (N, N) float64, symmetric, unit diagonal
    sigma: float
    underflow_clipped: bool = False

    @property
    def n(self) -> int:
        return self.z.shape[0]


def median_pairwise_sq_dist(points: np.ndarray) -> float:
    """Exact median of all N(N-1)/2 pairwise squared Euclidean distances.

    Even pair counts take the lower-middle element.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 points, got {n}")
    d = pairwise_sq_dists(points)
    iu = np.triu_indices(n, k=1)
    flat = d[iu]
    mid = (flat.size - 1) // 2
    return float(np.partition(flat, mid)[mid])


def compute_sigma(median_sq_dist: float, k: int, n: int, beta: int) -> SigmaSchedule:
    """Bandwidth sigma = median_sq_dist * ln(k) / (ln(n) * beta)."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if n < 3:
        raise ValueError(f"n must be >= 3, got {n}")
    if beta < 1:
        raise ValueError(f"beta must be >= 1, got {beta}")
    if median_sq_dist < 0:
        raise ValueError(f"median_sq_dist must be >= 0, got {median_sq_dist}")
    sigma = median_sq_dist * math.log(k) / (math.log(n) * beta)
    if sigma <= 0.0:
        raise ValueError("degenerate geometry: zero median pairwise distance")
    return SigmaSchedule(median_sq_dist, k, n, beta, sigma)


def sqrt_n_sigma(median_sq_dist: float, n: int) -> float:
    """Alternative schedule: median squared distance scaled by sqrt(n).

    Ignores the cluster count and pass count; exposed behind the pipeline's
    --sigma-schedule flag for experimentation.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    sigma = median_sq_dist * math.sqrt(n)
    if sigma <= 0.0:
        raise ValueError("degenerate geometry: zero median pairwise distance")
    return sigma


def rbf_kernel_matrix(points: np.ndarray, sigma: float) -> KernelMatrix:
    """Gram matrix Z[i][j] = exp(-||x_i - x_j||^2 / (2 sigma^2)).

    Symmetric with unit diagonal; entries in (0, 1]. Entries that underflow
    to exactly 0 are flushed to the smallest positive normal double and the
    result is flagged.
    """
    if sigma <= 0.0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    points = np.asarray(points, dtype=np.float64)
    d = pairwise_sq_dists(points)
    z = np.exp(-d / (2.0 * sigma * sigma))
    np.fill_diagonal(z, 1.0)
    clipped = False
    zeros = z == 0.0
    if np.any(zeros):
        z[zeros] = _TINY
        clipped = True
        warnings.warn(
            "kernel entries underflowed to 0 and were flushed to the smallest "
            "positive normal; consider a larger sigma",
            RuntimeWarning,
            stacklevel=2,
        )
    return KernelMatrix(z, float(sigma), clipped)

"""Hot numeric kernels in two interchangeable backends.

The O(N^2) inner loops (pairwise distances, the 2-D layout gradient, the
per-point bandwidth search) are compiled with numba when it is available. A
pure-numpy implementation of every kernel is kept alongside and stays the
reference for correctness tests and the benchmark in
benchmarks/bench_backends.py. One exception: nearest-centroid assignment is
always served by the BLAS formulation, which beats the compiled loops at
every relevant size (the benchmark shows why); its numba variant remains for
comparison.

Backend selection, decided once at import time:

    UNDERCLUST_BACKEND=numba   force numba (ImportError if missing)
    UNDERCLUST_BACKEND=numpy   force the pure-numpy fallback
    unset / auto               numba when importable, else numpy

Both backends are individually deterministic; results agree to float
round-off but are not bit-identical across backends (summation order
differs).
"""

from __future__ import annotations

import os

import numpy as np

_ENV_VAR = "UNDERCLUST_BACKEND"
_choice = os.environ.get(_ENV_VAR, "auto").lower()
if _choice not in ("auto", "numba", "numpy"):
    raise ValueError(f"{_ENV_VAR} must be 'numba', 'numpy' or 'auto', got {_choice!r}")

HAVE_NUMBA = False
if _choice != "numpy":
    # Probing the TBB layer emits a warning on some installs; pin a layer
    # that is always present unless the user chose one.
    os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")
    try:
        from numba import njit, prange

        HAVE_NUMBA = True
    except ImportError:
        if _choice == "numba":
            raise


# ---------------------------------------------------------------------------
# pure-numpy reference implementations
# ---------------------------------------------------------------------------


def _pairwise_sq_dists_numpy(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def _entropy_bisect_row(d_row: np.ndarray, target: float, tol: float, max_steps: int):
    """Bisect the precision of one conditional distribution to hit an entropy.

    `d_row` excludes the self distance. Entropies in nats. Returns
    (beta, entropy, weights); weights are exp(-beta * d) up to a positive
    per-row factor (distances are shifted by their minimum so the largest
    weight is always 1, which keeps large-scale data from underflowing).
    """
    d_row = d_row - d_row.min()
    beta = 1.0
    beta_lo, beta_hi = -np.inf, np.inf
    w = np.exp(-beta * d_row)
    for _ in range(max_steps):
        total = w.sum()
        h = np.log(total) + beta * float(d_row @ w) / total
        diff = h - target
        if abs(diff) <= tol:
            return beta, h, w
        if diff > 0.0:
            beta_lo = beta
            beta = beta * 2.0 if beta_hi == np.inf else (beta + beta_hi) / 2.0
        else:
            beta_hi = beta
            beta = beta / 2.0 if beta_lo == -np.inf else (beta + beta_lo) / 2.0
        w = np.exp(-beta * d_row)
    total = w.sum()
    h = np.log(total) + beta * float(d_row @ w) / total
    return beta, h, w


def _conditional_affinities_numpy(d: np.ndarray, target: float, tol: float, max_steps: int):
    n = d.shape[0]
    p = np.zeros((n, n))
    betas = np.empty(n)
    entropies = np.empty(n)
    idx = np.arange(n)
    for i in range(n):
        mask = idx != i
        beta, h, w = _entropy_bisect_row(d[i, mask], target, tol, max_steps)
        betas[i] = beta
        entropies[i] = h
        p[i, mask] = w / w.sum()
    return p, betas, entropies


def _layout_grad_kl_numpy(p: np.ndarray, y: np.ndarray):
    sq = np.sum(y * y, axis=1)
    num = sq[:, None] + sq[None, :] - 2.0 * (y @ y.T)
    num = 1.0 / (1.0 + np.maximum(num, 0.0))
    np.fill_diagonal(num, 0.0)
    total = num.sum()
    q = num / total
    w = (p - q) * num
    grad = 4.0 * ((np.diag(w.sum(axis=1)) - w) @ y)
    mask = p > 0.0
    kl = float(np.sum(p[mask] * np.log(p[mask] / np.maximum(q[mask], 1e-300))))
    return grad, kl


def _nearest_centroids_numpy(v: np.ndarray, c: np.ndarray):
    sq_v = np.sum(v * v, axis=1)
    sq_c = np.sum(c * c, axis=1)
    d = sq_v[:, None] + sq_c[None, :] - 2.0 * (v @ c.T)
    np.maximum(d, 0.0, out=d)
    labels = np.argmin(d, axis=1)
    return labels.astype(np.int64), d[np.arange(v.shape[0]), labels]


_NUMPY_IMPLS = {
    "pairwise_sq_dists": _pairwise_sq_dists_numpy,
    "conditional_affinities": _conditional_affinities_numpy,
    "layout_grad_kl": _layout_grad_kl_numpy,
    "nearest_centroids": _nearest_centroids_numpy,
}


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

_NUMBA_IMPLS: dict = {}

if HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def _pairwise_sq_dists_numba(x):
        n, m = x.shape
        d = np.zeros((n, n))
        for i in prange(n):
            for j in range(n):
                if i != j:
                    s = 0.0
                    for t in range(m):
                        diff = x[i, t] - x[j, t]
                        s += diff * diff
                    d[i, j] = s
        return d

    @njit(cache=True, parallel=True)
    def _conditional_affinities_numba(d, target, tol, max_steps):
        n = d.shape[0]
        p = np.zeros((n, n))
        betas = np.empty(n)
        entropies = np.empty(n)
        for i in prange(n):
            # shift distances by the row minimum so the largest weight is 1
            dmin = np.inf
            for j in range(n):
                if j != i and d[i, j] < dmin:
                    dmin = d[i, j]
            beta = 1.0
            beta_lo = -np.inf
            beta_hi = np.inf
            h = 0.0
            for _ in range(max_steps):
                total = 0.0
                weighted = 0.0
                for j in range(n):
                    if j != i:
                        dv = d[i, j] - dmin
                        w = np.exp(-beta * dv)
                        p[i, j] = w
                        total += w
                        weighted += dv * w
                h = np.log(total) + beta * weighted / total
                diff = h - target
                if abs(diff) <= tol:
                    break
                if diff > 0.0:
                    beta_lo = beta
                    if beta_hi == np.inf:
                        beta = beta * 2.0
                    else:
                        beta = (beta + beta_hi) / 2.0
                else:
                    beta_hi = beta
                    if beta_lo == -np.inf:
                        beta = beta / 2.0
                    else:
                        beta = (beta + beta_lo) / 2.0
            row_sum = 0.0
            for j in range(n):
                if j != i:
                    row_sum += p[i, j]
            for j in range(n):
                if j != i:
                    p[i, j] /= row_sum
            betas[i] = beta
            entropies[i] = h
        return p, betas, entropies

    @njit(cache=True, parallel=True)
    def _layout_grad_kl_numba(p, y):
        n = y.shape[0]
        num = np.zeros((n, n))
        row_sums = np.zeros(n)
        for i in prange(n):
            s = 0.0
            for j in range(n):
                if i != j:
                    dx = y[i, 0] - y[j, 0]
                    dy = y[i, 1] - y[j, 1]
                    v = 1.0 / (1.0 + dx * dx + dy * dy)
                    num[i, j] = v
                    s += v
            row_sums[i] = s
        total = 0.0
        for i in range(n):
            total += row_sums[i]
        grad = np.zeros((n, 2))
        kl_rows = np.zeros(n)
        for i in prange(n):
            gx = 0.0
            gy = 0.0
            kl = 0.0
            for j in range(n):
                if i != j:
                    q = num[i, j] / total
                    m = (p[i, j] - q) * num[i, j]
                    gx += m * (y[i, 0] - y[j, 0])
                    gy += m * (y[i, 1] - y[j, 1])
                    if p[i, j] > 0.0:
                        qc = q if q > 1e-300 else 1e-300
                        kl += p[i, j] * np.log(p[i, j] / qc)
            grad[i, 0] = 4.0 * gx
            grad[i, 1] = 4.0 * gy
            kl_rows[i] = kl
        kl_total = 0.0
        for i in range(n):
            kl_total += kl_rows[i]
        return grad, kl_total

    @njit(cache=True, parallel=True)
    def _nearest_centroids_numba(v, c):
        n, m = v.shape
        k = c.shape[0]
        labels = np.empty(n, dtype=np.int64)
        dists = np.empty(n)
        for i in prange(n):
            best = np.inf
            best_j = 0
            for j in range(k):
                s = 0.0
                for t in range(m):
                    diff = v[i, t] - c[j, t]
                    s += diff * diff
                if s < best:
                    best = s
                    best_j = j
            labels[i] = best_j
            dists[i] = best
        return labels, dists

    _NUMBA_IMPLS = {
        "pairwise_sq_dists": _pairwise_sq_dists_numba,
        "conditional_affinities": _conditional_affinities_numba,
        "layout_grad_kl": _layout_grad_kl_numba,
        "nearest_centroids": _nearest_centroids_numba,
    }


ACTIVE_BACKEND = "numba" if (HAVE_NUMBA and _choice != "numpy") else "numpy"
_impls = dict(_NUMBA_IMPLS) if ACTIVE_BACKEND == "numba" else dict(_NUMPY_IMPLS)
# BLAS wins for nearest-centroid assignment at every size we care about
# (benchmarks/bench_backends.py); the numba variant stays available there.
_impls["nearest_centroids"] = _nearest_centroids_numpy


def _as_c_f64(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    """All-pairs squared Euclidean distances, zero diagonal."""
    return _impls["pairwise_sq_dists"](_as_c_f64(x))


def conditional_affinities(d, target_nats, tol_nats, max_steps=100):
    """Row-stochastic affinities whose per-row entropy hits `target_nats`.

    Returns (P_conditional, betas, achieved entropies in nats). Rows that
    cannot reach the target within `max_steps` keep their closest entropy;
    the caller decides whether that is an error.
    """
    return _impls["conditional_affinities"](
        _as_c_f64(d), float(target_nats), float(tol_nats), int(max_steps)
    )


def layout_grad_kl(p: np.ndarray, y: np.ndarray):
    """Gradient of KL(P || Q) for a Student-t 2-D layout, plus the KL value."""
    return _impls["layout_grad_kl"](_as_c_f64(p), _as_c_f64(y))


def nearest_centroids(v: np.ndarray, c: np.ndarray):
    """Index of the closest centroid per row (ties to the lower index)."""
    return _impls["nearest_centroids"](_as_c_f64(v), _as_c_f64(c))


def warmup() -> None:
    """Trigger JIT compilation of every kernel on tiny inputs."""
    x = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    d = pairwise_sq_dists(x)
    conditional_affinities(d, np.log(2.0), 1e-5, 50)
    layout_grad_kl(np.full((4, 4), 1 / 12.0) - np.eye(4) / 12.0, x)
    nearest_centroids(x, x[:2])

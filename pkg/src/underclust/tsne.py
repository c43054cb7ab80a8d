"""Exact O(N^2) t-SNE to 2-D.

Gaussian affinities in the input space are matched per point to a target
perplexity by bisection on the Shannon entropy; the 2-D layout minimizes
KL(P || Q) against Student-t similarities by momentum gradient descent with
the usual per-coordinate gain adaptation and an early exaggeration phase.
The recorded KL trace is always measured against the plain (unexaggerated)
affinities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._accel import conditional_affinities, layout_grad_kl, pairwise_sq_dists
from .dataset import EmbeddingSet

ENTROPY_TOL_BITS = 1e-4
_MAX_BISECT_STEPS = 200


class DivergenceError(RuntimeError):
    """The layout optimization produced a non-finite objective."""


@dataclass
class AffinityMatrix:
    p: np.ndarray               # (N, N) symmetric joint probabilities, zero diagonal
    perplexity: float
    bandwidths: np.ndarray      # (N,) per-point Gaussian sigmas


@dataclass
class Embedding2D:
    points: np.ndarray          # (N, 2), row order matches the input set
    kl_trace: list


@dataclass
class TsneConfig:
    iterations: int = 1000
    learning_rate: float = 200.0
    momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch_iter: int = 250
    early_exaggeration_factor: float = 12.0
    early_exaggeration_iters: int = 250
    seed: int = 0
    init: np.ndarray | None = field(default=None, repr=False)


def compute_affinities(e: EmbeddingSet | np.ndarray, perplexity: float) -> AffinityMatrix:
    """Symmetrized joint affinities with per-point entropy log2(perplexity).

    Raises when a point's conditional distribution cannot reach the target
    entropy (e.g. all its neighbors coincide), naming the point.
    """
    x = e.vectors if isinstance(e, EmbeddingSet) else np.asarray(e)
    n = x.shape[0]
    if n < 4:
        raise ValueError(f"need at least 4 points, got {n}")
    if not 1.0 <= perplexity < n:
        raise ValueError(f"perplexity must be in [1, N), got {perplexity} for N={n}")
    d = pairwise_sq_dists(np.asarray(x, dtype=np.float64))
    target_nats = math.log(perplexity)
    tol_nats = ENTROPY_TOL_BITS * math.log(2.0)
    cond, betas, entropies = conditional_affinities(d, target_nats, tol_nats, _MAX_BISECT_STEPS)
    off = np.abs(entropies - target_nats) > tol_nats
    if np.any(off):
        i = int(np.flatnonzero(off)[0])
        raise ValueError(
            f"perplexity {perplexity} unreachable for point {i} "
            f"(achieved entropy {entropies[i] / math.log(2.0):.4f} bits)"
        )
    p = (cond + cond.T) / (2.0 * n)
    return AffinityMatrix(p, float(perplexity), np.sqrt(0.5 / betas))


def kl_and_grad(p: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """KL(P || Q(y)) and its gradient with respect to the layout y."""
    grad, kl = layout_grad_kl(p, y)
    return kl, grad


def run_tsne(aff: AffinityMatrix, config: TsneConfig | None = None) -> Embedding2D:
    """Optimize a 2-D layout for the given affinities.

    Deterministic given the config seed. `config.init` overrides the seeded
    Gaussian initialization (useful for warm starts and permutation tests).
    """
    config = config or TsneConfig()
    if config.iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {config.iterations}")
    exag = float(config.early_exaggeration_factor)
    if exag <= 0.0:
        raise ValueError(f"early_exaggeration_factor must be > 0, got {exag}")
    p = aff.p
    n = p.shape[0]
    if config.init is not None:
        y = np.array(config.init, dtype=np.float64, copy=True)
        if y.shape != (n, 2):
            raise ValueError(f"init must have shape ({n}, 2), got {y.shape}")
    else:
        y = np.random.default_rng(config.seed).normal(0.0, 1e-4, size=(n, 2))

    p_exag = p * exag
    log_exag = math.log(exag)
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    kl_trace: list[float] = []
    # monotone-descent state for the post-exaggeration phase: a step that
    # raised the objective is reverted, momentum restarts and the step scale
    # halves, so the recorded trace never increases after exaggeration ends
    step_scale = 1.0
    best_kl = math.inf
    best_y = None
    best_grad = None
    for it in range(config.iterations):
        exaggerating = it < config.early_exaggeration_iters
        if exaggerating:
            grad, kl_raw = layout_grad_kl(p_exag, y)
            # KL against exaggerated targets is exag*(log(exag) + KL), so the
            # plain value is recoverable without a second pass
            kl = (kl_raw - exag * log_exag) / exag
        else:
            if it == config.early_exaggeration_iters:
                velocity[:] = 0.0
            grad, kl = layout_grad_kl(p, y)
            if kl > best_kl:
                y = best_y.copy()
                grad = best_grad
                kl = best_kl
                velocity[:] = 0.0
                step_scale *= 0.5
            else:
                best_kl, best_y, best_grad = kl, y.copy(), grad
                step_scale = min(step_scale * 1.1, 1.0)
        kl_trace.append(float(kl))
        if not math.isfinite(kl):
            raise DivergenceError(f"non-finite objective at iteration {it}")
        inc = (grad > 0.0) != (velocity > 0.0)
        gains = np.where(inc, gains + 0.2, gains * 0.8)
        np.maximum(gains, 0.01, out=gains)
        momentum = config.momentum if it < config.momentum_switch_iter else config.final_momentum
        velocity = momentum * velocity - config.learning_rate * step_scale * gains * grad
        y += velocity
        if not np.all(np.isfinite(y)):
            raise DivergenceError(f"non-finite layout at iteration {it}")
        y -= y.mean(axis=0)
    final_kl = float(layout_grad_kl(p, y)[1])
    if not math.isfinite(final_kl):
        raise DivergenceError(f"non-finite objective at iteration {config.iterations}")
    if best_y is not None and final_kl > best_kl:
        y = best_y
        final_kl = best_kl
    kl_trace.append(final_kl)
    return Embedding2D(y, kl_trace)


def reduce_embeddings(
    e: EmbeddingSet, perplexity: float = 30.0, config: TsneConfig | None = None
) -> Embedding2D:
    """Convenience composition: affinities then layout optimization.

    The perplexity is clamped to (N - 1) / 3 so small sets stay feasible.
    """
    clamped = min(perplexity, (e.n - 1) / 3.0)
    aff = compute_affinities(e, clamped)
    return run_tsne(aff, config)


def save_layout_csv(e: EmbeddingSet, layout: Embedding2D, path) -> None:
    """Dump the layout as `id,x,y` rows for external plotting."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id,x,y\n")
        for sid, (x, yv) in zip(e.ids, layout.points):
            fh.write(f"{sid},{x:.9g},{yv:.9g}\n")

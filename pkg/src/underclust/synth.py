"""Seeded Gaussian-mixture generators for benchmarks and tests."""

from __future__ import annotations

import numpy as np

from .dataset import EmbeddingSet


def gaussian_blobs(
    n: int,
    d: int,
    n_classes: int,
    seed,
    center_scale: float = 10.0,
    cluster_std: float = 1.0,
    weights=None,
) -> EmbeddingSet:
    """Labeled mixture of `n_classes` spherical Gaussians in d dimensions.

    Class centers are drawn from N(0, center_scale^2 I); the overlap between
    classes is controlled by the ratio center_scale / cluster_std. `weights`
    optionally skews the class proportions (defaults to balanced).
    """
    if n_classes < 1 or n < n_classes:
        raise ValueError(f"need n >= n_classes >= 1, got n={n}, n_classes={n_classes}")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, center_scale, size=(n_classes, d))
    if weights is None:
        probs = np.full(n_classes, 1.0 / n_classes)
    else:
        probs = np.asarray(weights, dtype=np.float64)
        probs = probs / probs.sum()
    # deterministic class sizes: largest-remainder rounding of n * probs
    sizes = np.floor(n * probs).astype(np.int64)
    remainder = np.argsort(-(n * probs - sizes), kind="stable")
    for j in remainder[: n - int(sizes.sum())]:
        sizes[j] += 1
    assignments = np.repeat(np.arange(n_classes), sizes)
    vectors = centers[assignments] + rng.normal(0.0, cluster_std, size=(n, d))
    order = rng.permutation(n)
    assignments = assignments[order]
    vectors = vectors[order]
    ids = [f"s{i:05d}" for i in range(n)]
    labels = [f"class_{c}" for c in assignments]
    return EmbeddingSet(ids, vectors.astype(np.float32), labels)

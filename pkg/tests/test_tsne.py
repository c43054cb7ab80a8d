import math

import numpy as np
import pytest
from scipy.optimize import brentq

from underclust.dataset import EmbeddingSet
from underclust.tsne import (
    DivergenceError,
    TsneConfig,
    compute_affinities,
    kl_and_grad,
    run_tsne,
    save_layout_csv,
)


def entropy_bits(p_row):
    p = p_row[p_row > 0]
    return float(-(p * np.log2(p)).sum())


def oracle_beta(d_row, perplexity):
    """Independent scalar root-finder for one point's precision."""

    def gap(beta):
        w = np.exp(-beta * (d_row - d_row.min()))
        p = w / w.sum()
        return entropy_bits(p) - math.log2(perplexity)

    lo, hi = 1e-12, 1.0
    while gap(hi) > 0:
        hi *= 2
    return brentq(gap, lo, hi, xtol=1e-12)


# -- affinities ------------------------------------------------------------------


def test_square_corners_symmetry():
    pts = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    aff = compute_affinities(pts, 2.0)
    p = aff.p
    assert np.array_equal(p, p.T)
    assert np.all(np.diag(p) == 0.0)
    assert np.all(p >= 0.0)
    assert abs(p.sum() - 1.0) < 1e-6
    # the square's symmetry forces all edge entries equal and both diagonal
    # entries equal
    edges = [p[0, 1], p[0, 2], p[1, 3], p[2, 3]]
    diagonals = [p[0, 3], p[1, 2]]
    assert np.allclose(edges, edges[0], rtol=1e-9)
    assert np.allclose(diagonals, diagonals[0], rtol=1e-9)


def test_sum_is_one(rng):
    for _ in range(5):
        x = rng.normal(size=(12, 6))
        aff = compute_affinities(x, 4.0)
        assert abs(aff.p.sum() - 1.0) < 1e-6


def test_entropy_matches_oracle(rng):
    x = rng.normal(size=(6, 3))
    perplexity = 3.0
    aff = compute_affinities(x, perplexity)
    d = np.array([[np.sum((a - b) ** 2) for b in x] for a in x])
    for i in range(6):
        mask = np.arange(6) != i
        # the bandwidth the bisection found reproduces the target entropy
        beta_found = 0.5 / aff.bandwidths[i] ** 2
        w = np.exp(-beta_found * d[i, mask])
        assert abs(entropy_bits(w / w.sum()) - math.log2(perplexity)) < 1e-4
        # and agrees with an independent scalar root-finder
        beta_star = oracle_beta(d[i, mask], perplexity)
        sigma_star = math.sqrt(0.5 / beta_star)
        assert aff.bandwidths[i] == pytest.approx(sigma_star, rel=1e-2)


def test_degenerate_point_reports_index():
    # point 0's neighbors all coincide: conditional entropy is pinned at
    # log2(3) regardless of bandwidth, so perplexity 2 is unreachable
    pts = np.array([[0.0, 0.0], [5.0, 5.0], [5.0, 5.0], [5.0, 5.0]])
    with pytest.raises(ValueError, match="point 0"):
        compute_affinities(pts, 2.0)


def test_perplexity_preconditions(rng):
    x = rng.normal(size=(5, 2))
    with pytest.raises(ValueError):
        compute_affinities(x, 5.0)
    with pytest.raises(ValueError):
        compute_affinities(x[:3], 2.0)


# -- gradient ---------------------------------------------------------------------


def test_gradient_matches_finite_differences(rng):
    n = 8
    x = rng.normal(size=(n, 4))
    aff = compute_affinities(x, 3.0)
    y = rng.normal(size=(n, 2))
    kl0, grad = kl_and_grad(aff.p, y)
    assert kl0 >= 0.0
    eps = 1e-5
    num = np.zeros_like(grad)
    for i in range(n):
        for c in range(2):
            yp = y.copy()
            yp[i, c] += eps
            ym = y.copy()
            ym[i, c] -= eps
            num[i, c] = (kl_and_grad(aff.p, yp)[0] - kl_and_grad(aff.p, ym)[0]) / (2 * eps)
    rel = np.abs(grad - num) / np.maximum(np.abs(grad) + np.abs(num), 1e-8)
    assert rel.max() < 1e-4


# -- optimization -------------------------------------------------------------------


def two_group_set(rng):
    a = np.tile(rng.normal(size=(1, 10)), (20, 1))
    b = np.tile(rng.normal(size=(1, 10)) + 50.0, (20, 1))
    return np.vstack([a, b])


def test_separation_predicate(rng):
    # perplexity just above the within-group neighbor count (19) keeps the
    # cross-group affinity leakage minimal while staying reachable
    x = two_group_set(rng)
    aff = compute_affinities(x, 20.0)
    out = run_tsne(aff, TsneConfig(iterations=400, early_exaggeration_iters=100,
                                   momentum_switch_iter=100, seed=0))
    pts = out.points
    within = max(
        np.max(np.linalg.norm(pts[:20] - pts[:20][:, None], axis=-1)),
        np.max(np.linalg.norm(pts[20:] - pts[20:][:, None], axis=-1)),
    )
    between = np.min(np.linalg.norm(pts[:20][:, None] - pts[20:][None, :], axis=-1))
    assert within < between


def test_kl_trace_non_increasing_windows(rng):
    x = rng.normal(size=(60, 8))
    x[:30] += 6.0
    aff = compute_affinities(x, 10.0)
    cfg = TsneConfig(iterations=500, early_exaggeration_iters=150, momentum_switch_iter=150, seed=2)
    out = run_tsne(aff, cfg)
    trace = np.asarray(out.kl_trace)
    assert np.all(trace >= 0.0)
    post = trace[150:]
    # any 50-iteration window must not increase beyond tolerance
    assert np.all(post[50:] <= post[:-50] + 1e-3)


def test_same_seed_bit_identical(rng):
    x = rng.normal(size=(20, 5))
    aff = compute_affinities(x, 5.0)
    cfg = TsneConfig(iterations=120, early_exaggeration_iters=40, momentum_switch_iter=40, seed=7)
    a = run_tsne(aff, cfg)
    b = run_tsne(aff, cfg)
    assert np.array_equal(a.points, b.points)
    assert a.kl_trace == b.kl_trace


def test_permutation_commutes(rng):
    from dataclasses import replace

    n = 15
    x = rng.normal(size=(n, 4))
    aff = compute_affinities(x, 4.0)
    y0 = rng.normal(0, 1e-4, size=(n, 2))
    perm = rng.permutation(n)
    aff_p = compute_affinities(x[perm], 4.0)
    cfg = TsneConfig(iterations=60, early_exaggeration_iters=20, momentum_switch_iter=20)
    base = run_tsne(aff, replace(cfg, init=y0))
    permuted = run_tsne(aff_p, replace(cfg, init=y0[perm]))
    assert np.allclose(permuted.points, base.points[perm], atol=1e-6)


def test_divergence_aborts_with_iteration(rng):
    x = rng.normal(size=(10, 3))
    aff = compute_affinities(x, 3.0)
    with pytest.raises(DivergenceError, match="iteration"):
        run_tsne(aff, TsneConfig(iterations=200, learning_rate=1e300, seed=0))


def test_layout_csv_dump(tmp_path, rng):
    x = rng.normal(size=(8, 3)).astype(np.float32)
    e = EmbeddingSet([f"p{i}" for i in range(8)], x)
    aff = compute_affinities(e, 2.5)
    out = run_tsne(aff, TsneConfig(iterations=50, early_exaggeration_iters=10, seed=1))
    path = tmp_path / "layout.csv"
    save_layout_csv(e, out, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "id,x,y"
    assert len(lines) == 9

import math

import numpy as np
import pytest

from underclust.kernel import (
    KernelMatrix,
    compute_sigma,
    median_pairwise_sq_dist,
    rbf_kernel_matrix,
    sqrt_n_sigma,
)


# -- median -------------------------------------------------------------------


def test_median_single_pair():
    assert median_pairwise_sq_dist(np.array([[0.0, 0.0], [3.0, 4.0]])) == 25.0


def test_median_three_collinear():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    # pairs {1, 4, 1} -> median 1
    assert median_pairwise_sq_dist(pts) == 1.0


def test_median_even_count_lower_middle():
    pts = np.array([[0.0], [1.0], [3.0], [7.0]])
    # six pairwise squared distances sorted: 1,4,9,16,36,49 -> lower middle 9
    assert median_pairwise_sq_dist(pts) == 9.0


def test_median_matches_brute_force(rng):
    pts = rng.normal(size=(50, 2))
    # independent oracle: full sort of the explicit pair list
    dists = sorted(
        float(np.sum((pts[i] - pts[j]) ** 2))
        for i in range(50)
        for j in range(i + 1, 50)
    )
    expected = dists[(len(dists) - 1) // 2]
    assert median_pairwise_sq_dist(pts) == pytest.approx(expected, rel=1e-12)


def test_median_requires_two_points():
    with pytest.raises(ValueError):
        median_pairwise_sq_dist(np.zeros((1, 2)))


# -- sigma schedule ----------------------------------------------------------------


def test_sigma_direct_evaluation():
    s = compute_sigma(4.0, 16, 1000, 3)
    assert s.sigma == pytest.approx(4.0 * math.log(16) / (math.log(1000) * 3))
    assert s.sigma == pytest.approx(0.535, abs=5e-4)


def test_sigma_zero_median_degenerate():
    with pytest.raises(ValueError, match="degenerate geometry"):
        compute_sigma(0.0, 8, 100, 2)


def test_sigma_halves_when_beta_doubles():
    a = compute_sigma(2.5, 9, 500, 2).sigma
    b = compute_sigma(2.5, 9, 500, 4).sigma
    assert b == pytest.approx(a / 2, rel=1e-12)


def test_sigma_preconditions():
    with pytest.raises(ValueError):
        compute_sigma(1.0, 1, 100, 1)
    with pytest.raises(ValueError):
        compute_sigma(1.0, 4, 2, 1)
    with pytest.raises(ValueError):
        compute_sigma(1.0, 4, 100, 0)


def test_sqrt_n_schedule():
    assert sqrt_n_sigma(2.0, 100) == pytest.approx(20.0)
    with pytest.raises(ValueError, match="degenerate"):
        sqrt_n_sigma(0.0, 100)


# -- gram matrix ---------------------------------------------------------------------


def test_unit_diagonal(rng):
    z = rbf_kernel_matrix(rng.normal(size=(20, 2)), 1.3)
    assert np.all(np.diag(z.z) == 1.0)


def test_analytic_entry():
    pts = np.array([[0.0, 0.0], [1.0, 1.0], [5.0, 5.0]])
    z = rbf_kernel_matrix(pts, 1.0)
    # squared distance 2 at sigma 1 -> exp(-1)
    assert z.z[0, 1] == pytest.approx(math.exp(-1.0), rel=1e-12)
    assert z.z[0, 1] == pytest.approx(0.36788, abs=5e-6)


def test_entries_decrease_with_distance():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [4.0, 0.0]])
    z = rbf_kernel_matrix(pts, 2.0).z
    assert z[0, 1] > z[0, 2] > z[0, 3]


def test_range_and_symmetry(rng):
    pts = rng.normal(size=(30, 2)) * 3
    z = rbf_kernel_matrix(pts, 0.8).z
    assert np.array_equal(z, z.T)
    assert np.all(z > 0.0) and np.all(z <= 1.0)


def test_sigma_monotonicity_grid(rng):
    pts = rng.normal(size=(15, 2)) * 2
    sigmas = [0.5, 1.0, 2.0, 4.0, 8.0]
    mats = []
    for s in sigmas:
        z = rbf_kernel_matrix(pts, s)
        assert not z.underflow_clipped
        mats.append(z.z)
    off = ~np.eye(15, dtype=bool)
    for a, b in zip(mats[:-1], mats[1:]):
        assert np.all(a[off] < b[off])


def test_positive_semidefinite(rng):
    for n in (10, 30, 50):
        pts = rng.normal(size=(n, 2)) * 4
        z = rbf_kernel_matrix(pts, 1.1).z
        eigs = np.linalg.eigvalsh(z)  # independent eigenvalue routine
        assert eigs.min() >= -1e-8


def test_underflow_flushed_and_flagged():
    pts = np.array([[0.0, 0.0], [1e6, 0.0], [0.0, 1.0], [1.0, 1.0]])
    with pytest.warns(RuntimeWarning, match="underflow"):
        z = rbf_kernel_matrix(pts, 0.01)
    assert z.underflow_clipped
    assert np.all(z.z > 0.0)


def test_sigma_must_be_positive(rng):
    with pytest.raises(ValueError):
        rbf_kernel_matrix(rng.normal(size=(4, 2)), 0.0)

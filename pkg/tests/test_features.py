from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dprf.features import (
    FeatureKind,
    FeatureSample,
    build_design_matrix,
    check_concentration_conditions,
    estimate_gamma_sq,
    feature_map,
    gaussian_kernel,
    kernel_estimate,
    sample_features,
)


def test_sample_shape_and_no_offsets():
    f = sample_features(7, 5, 3, 40.0, "fourier")
    assert f.omegas.shape == (5, 3)
    assert f.offsets is None
    assert f.kind is FeatureKind.FOURIER


def test_sample_is_deterministic():
    a = sample_features(7, 5, 3, 40.0)
    b = sample_features(7, 5, 3, 40.0)
    assert np.array_equal(a.omegas, b.omegas)
    c1 = sample_features(7, 5, 3, 40.0, "cosine")
    c2 = sample_features(7, 5, 3, 40.0, "cosine")
    assert np.array_equal(c1.offsets, c2.offsets)


def test_sample_variance_matches():
    f = sample_features(0, 100_000, 1, 4.0)
    assert abs(np.var(f.omegas) - 4.0) / 4.0 < 0.05


def test_cosine_offsets_in_range():
    f = sample_features(3, 1000, 2, 1.0, "cosine")
    assert f.offsets.shape == (1000,)
    assert np.all(np.abs(f.offsets) <= math.pi)


def test_nested_draws_across_n():
    small = sample_features(11, 10, 4, 2.0)
    big = sample_features(11, 50, 4, 2.0)
    assert np.array_equal(big.omegas[:10], small.omegas)


@pytest.mark.parametrize("args", [(0, 0, 3, 1.0), (0, 5, 0, 1.0), (0, 5, 3, 0.0), (0, 5, 3, -1.0)])
def test_sample_rejects_bad_arguments(args):
    with pytest.raises(ValueError):
        sample_features(*args)


def test_feature_sample_invariants():
    with pytest.raises(ValueError):
        FeatureSample(np.zeros((3, 2)), 1.0, 0, FeatureKind.COSINE, None)
    with pytest.raises(ValueError):
        FeatureSample(np.zeros((3, 2)), 1.0, 0, FeatureKind.FOURIER, np.zeros(3))
    with pytest.raises(ValueError):
        FeatureSample(np.zeros((3, 2)), 1.0, 0, FeatureKind.COSINE, np.full(3, 4.0))


def test_samples_are_read_only():
    f = sample_features(1, 4, 2, 1.0)
    with pytest.raises(ValueError):
        f.omegas[0, 0] = 1.0


def test_zero_input_gives_row_of_ones():
    f = sample_features(2, 20, 3, 5.0)
    A = build_design_matrix(f, np.zeros((1, 3)))
    assert np.allclose(A.entries, 1.0, atol=1e-15)


def test_unit_modulus_entries():
    f = sample_features(2, 200, 4, 40.0)
    X = np.random.default_rng(0).normal(size=(30, 4))
    A = build_design_matrix(f, X)
    assert A.shape == (30, 200)
    assert np.max(np.abs(np.abs(A.entries) - 1.0)) <= 1e-12


def test_exp_i_pi():
    f = FeatureSample(np.array([[math.pi]]), 1.0, 0)
    A = build_design_matrix(f, np.array([[1.0]]))
    assert abs(A.entries[0, 0] - (-1 + 0j)) <= 1e-12


def test_cosine_entries():
    f = FeatureSample(np.array([[1.0], [2.0]]), 1.0, 0, FeatureKind.COSINE, np.array([0.5, -0.25]))
    A = build_design_matrix(f, np.array([[0.3]]))
    assert not np.iscomplexobj(A.entries)
    assert np.allclose(A.entries[0], np.cos(np.array([0.3 + 0.5, 0.6 - 0.25])), atol=1e-15)


def test_dimension_mismatch():
    f = sample_features(0, 10, 3, 1.0)
    with pytest.raises(ValueError):
        build_design_matrix(f, np.zeros((4, 2)))
    with pytest.raises(ValueError):
        kernel_estimate(f, np.zeros(3), np.zeros(2))


def test_kernel_self_is_one():
    f = sample_features(0, 300, 5, 3.0)
    x = np.random.default_rng(1).normal(size=5)
    assert abs(kernel_estimate(f, x, x) - 1.0) <= 1e-12
    fc = sample_features(0, 300, 5, 3.0, "cosine")
    # the cosine estimate is only unbiased, not exactly one on the diagonal
    assert abs(kernel_estimate(fc, x, x) - 1.0) < 0.2


def test_kernel_monte_carlo_against_closed_form():
    sigma_sq = 1.0
    f = sample_features(5, 100_000, 3, sigma_sq)
    rng = np.random.default_rng(2)
    x, xp = rng.normal(size=3) * 0.5, rng.normal(size=3) * 0.5
    est = kernel_estimate(f, x, xp)
    assert abs(est - gaussian_kernel(x, xp, sigma_sq)) < 0.01


def test_kernel_decays_for_distant_points():
    f = sample_features(5, 100_000, 3, 40.0)
    est = kernel_estimate(f, np.zeros(3), np.full(3, 2.0))
    assert abs(est) <= 0.02


def test_kernel_error_shrinks_with_n():
    rng = np.random.default_rng(3)
    pairs = rng.normal(size=(100, 2, 2)) * 0.7
    errs = []
    for N in (1_000, 10_000, 100_000):
        f = sample_features(9, N, 2, 1.0)
        phi_a = feature_map(f, pairs[:, 0])
        phi_b = feature_map(f, pairs[:, 1])
        est = np.sum(phi_a * phi_b.conj(), axis=1)
        truth = np.exp(-0.5 * np.sum((pairs[:, 0] - pairs[:, 1]) ** 2, axis=1))
        errs.append(np.max(np.abs(est - truth)))
    inversions = sum(b > a for a, b in zip(errs, errs[1:]))
    assert inversions <= 1
    assert errs[-1] < errs[0]


def test_feature_map_normalisation():
    f = sample_features(0, 64, 2, 1.0)
    X = np.random.default_rng(0).normal(size=(5, 2))
    phi = feature_map(f, X)
    assert np.allclose(np.linalg.norm(phi, axis=1), 1.0, atol=1e-12)
    assert np.allclose(phi * math.sqrt(64), build_design_matrix(f, X).entries)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.integers(1, 6), st.integers(1, 8))
def test_row_norms_are_sqrt_n(seed, n, d, m):
    f = sample_features(seed, n, d, 10.0)
    X = np.random.default_rng(seed).normal(scale=5.0, size=(m, d))
    norms = np.linalg.norm(build_design_matrix(f, X).entries, axis=1)
    assert np.allclose(norms, math.sqrt(n), rtol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_kernel_conjugate_symmetry(seed, coords):
    f = sample_features(seed, 50, 3, 2.0)
    x, xp = np.array(coords[:3]), np.array(coords[3:])
    assert abs(kernel_estimate(f, x, xp) - np.conj(kernel_estimate(f, xp, x))) <= 1e-12
    assert abs(kernel_estimate(f, x, x) - 1.0) <= 1e-12


def test_required_n_formula():
    rep = check_concentration_conditions(100, 10, 12_000, 0.25, 0.1, 1.0, 1.0)
    expected = 16 * 100 * math.log(2000)
    assert rep.required_N == pytest.approx(expected, rel=1e-14)
    assert rep.required_N == pytest.approx(12161.5, abs=0.1)
    assert rep.n_ok is False
    assert check_concentration_conditions(100, 10, 12_162, 0.25, 0.1, 1.0, 1.0).n_ok is True


def test_eta_half_rejected_by_default():
    with pytest.raises(ValueError):
        check_concentration_conditions(100, 10, 1000, 0.5, 0.1, 1.0, 1.0)
    rep = check_concentration_conditions(100, 10, 1000, 0.5, 0.1, 1.0, 1.0, allow_large_eta=True)
    assert rep.required_N == pytest.approx(4 * 100 * math.log(2000))


@pytest.mark.parametrize("delta", [0.0, 1.0, -0.1])
def test_delta_open_interval(delta):
    with pytest.raises(ValueError):
        check_concentration_conditions(100, 10, 1000, 0.25, delta, 1.0, 1.0)


def test_variance_boundary_is_inclusive():
    m, eta = 50, 0.25
    threshold = 4 * math.log(2 * m / eta)
    rep = check_concentration_conditions(m, 10, 10, eta, 0.1, threshold, 1.0)
    assert rep.variance_ok is True
    assert rep.required_variance_product == rep.observed_variance_product


def test_condition_booleans_match_thresholds():
    for N in (10, 10_000, 100_000):
        for d in (1, 5, 50):
            rep = check_concentration_conditions(30, d, N, 0.3, 0.05, 2.0, 3.0, constants=(2.0, 0.5))
            assert rep.d_ok == (d >= rep.required_d)
            assert rep.n_ok == (N >= rep.required_N)
            assert rep.variance_ok == (rep.observed_variance_product >= rep.required_variance_product)
            assert rep.constants_used == (2.0, 0.5)


def test_gamma_sq_estimate():
    X = np.random.default_rng(0).normal(scale=2.0, size=(20_000, 5))
    assert estimate_gamma_sq(X) == pytest.approx(5 * 4.0, rel=0.03)

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dprf.data import Dataset, Provenance, gen_synthetic
from dprf.diagnostics import (
    AuditMode,
    concentration_check,
    eval_generalization_bound,
    format_audit,
    gamma_chebyshev_bound,
    gaussian_tail_bound,
    generalization_bound_terms,
    noise_calibration,
    sensitivity_audit,
)
from dprf.features import build_design_matrix, sample_features
from dprf.privacy import GammaMechanism, GaussianMechanism, PrivacyParams, calibrate_gaussian


def test_single_row_has_zero_deviation():
    f = sample_features(0, 300, 4, 10.0)
    A = build_design_matrix(f, np.random.default_rng(0).normal(size=(1, 4)))
    res = concentration_check(A)
    assert res.spectral_deviation <= 1e-14
    assert res.lambda_min == pytest.approx(1.0) and res.lambda_max == pytest.approx(1.0)


def test_scaled_identity():
    # square case: N = m
    N = 5
    res = concentration_check(math.sqrt(N) * np.eye(N))
    assert res.spectral_deviation == pytest.approx(0.0, abs=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 10), st.integers(1, 60))
def test_eigenvalue_sandwich(seed, m, N):
    A = np.random.default_rng(seed).normal(size=(m, N)) + 0j
    res = concentration_check(A)
    assert abs(res.lambda_min - 1) <= res.spectral_deviation + 1e-12
    assert abs(res.lambda_max - 1) <= res.spectral_deviation + 1e-12
    assert res.lambda_min <= res.lambda_max


def test_duplicate_swap_with_twin_is_zero():
    X = np.array([[0.3, -0.2], [0.3, -0.2], [1.0, 0.5]])
    raw = np.array([0.5, 0.5, 0.7])
    div = float(np.linalg.norm(raw))
    ds = Dataset(X, raw / div, None, Provenance(label_divisor=div))
    pool = Dataset(X[:1], raw[:1], None, Provenance())
    f = sample_features(0, 50, 2, 1.0)
    res = sensitivity_audit(ds, f, "swap", trials=1, pool=pool, method="svd")
    assert res.empirical_max <= 1e-12
    assert res.trials == 1


def test_remove_mode_is_exhaustive_and_capped():
    ds = gen_synthetic(0, 2, 3)
    f = sample_features(1, 40, 3, 1.0)
    res = sensitivity_audit(ds, f, AuditMode.REMOVE, trials=10)
    assert res.trials == 2
    assert len(res.differences) == 2
    assert res.mode is AuditMode.REMOVE
    # removing row j must give the direct recomputation
    from dprf.solvers import solve_min_norm

    A = build_design_matrix(f, ds.X).entries
    c0 = solve_min_norm(A, ds.y).values
    for j in range(2):
        keep = [k for k in range(2) if k != j]
        raw = ds.raw_labels[keep]
        c1 = solve_min_norm(A[keep], raw / np.linalg.norm(raw)).values
        assert res.differences[j] == pytest.approx(np.linalg.norm(c0 - c1), rel=1e-9)


def test_audit_bound_and_flag():
    ds = gen_synthetic(0, 20, 30)
    f = sample_features(1, 2000, 30, 1.0)
    res = sensitivity_audit(ds, f, "swap", trials=30, eta=0.375, rng_seed=2)
    assert res.theoretical_bound == pytest.approx(4 / math.sqrt(2000))
    assert res.violated == (res.empirical_max > res.theoretical_bound)
    assert res.violated is False
    assert "sensitivity[swap]" in format_audit(res)


def test_audit_excludes_singular_neighbours():
    # two features make any neighbour with a repeated point singular
    X = np.array([[0.0], [1.0]])
    ds = Dataset(X, np.array([0.6, 0.8]), None, Provenance())
    pool = Dataset(np.array([[1.0]]), np.array([0.8]), None, Provenance())
    f = sample_features(0, 2, 1, 1.0)
    res = sensitivity_audit(ds, f, "swap", trials=1, pool=pool)
    assert res.excluded == 1 and res.trials == 0


def test_audit_requires_bounded_labels():
    ds = Dataset(np.zeros((2, 1)) + [[0.0], [1.0]], np.array([1.0, 1.0]), None, Provenance())
    with pytest.raises(ValueError):
        sensitivity_audit(ds, sample_features(0, 10, 1, 1.0), "remove", 2)


def test_noise_calibration_zero_variance():
    mech = GaussianMechanism(PrivacyParams.noiseless(50))
    rep = noise_calibration(mech, 50, 200)
    for field in ("coord_variance_mean", "coord_variance_max_rel_error", "mean_norm", "mean_norm_sq", "quantile"):
        assert getattr(rep, field) == 0.0
    assert rep.bound == 0.0 and rep.bound_holds


def test_noise_calibration_gaussian_moments():
    p = calibrate_gaussian(1000, 0.375, 1.0, 1e-5)
    rep = noise_calibration(GaussianMechanism(p), 1000, 100_000, rng_seed=1)
    assert rep.coord_variance_max_rel_error < 0.05
    assert rep.mean_norm_sq == pytest.approx(1000 * p.noise_variance, rel=0.01)
    assert rep.quantile_statistic == "norm_sq" and rep.quantile_level == pytest.approx(0.9)


def test_noise_calibration_gamma_mean():
    p = calibrate_gaussian(1000, 0.375, 1.0, 1e-5)
    mech = GammaMechanism.from_params(p)
    rep = noise_calibration(mech, 1000, 10_000, rng_seed=2)
    assert rep.mean_norm == pytest.approx(1000 / mech.xi, rel=0.05)
    assert rep.reference_mean_norm == pytest.approx(1000 / mech.xi)
    assert rep.quantile_statistic == "norm" and rep.quantile_level == pytest.approx(0.95)


def test_noise_calibration_rejects_few_draws():
    with pytest.raises(ValueError):
        noise_calibration(GammaMechanism(1.0, 1.0), 3, 99)


def test_tail_bound_formulas():
    eps, dp, eta, N, delta = 0.5, 1e-5, 0.375, 4000, 0.1
    lead = 2 * math.log(1.25 / dp) / ((1 - 2 * eta) * eps**2)
    tail = 8 * math.sqrt(2) / (math.sqrt(N) * (1 - 2 * eta) * eps) * math.sqrt(math.log(1 / delta))
    assert gaussian_tail_bound(eps, dp, eta, N, delta) == pytest.approx(lead + tail, rel=1e-15)
    cheb = math.sqrt(2 / ((1 - 2 * eta) * eps**2)) * (math.sqrt(N) + math.sqrt(2 / delta))
    assert gamma_chebyshev_bound(eps, eta, N, delta) == pytest.approx(cheb, rel=1e-15)


def _second_transcription(N, m, eta, delta, eps, dp, f_norm):
    # written out independently from the formula statement
    a = 14 * np.log(2 / delta) / np.sqrt(N)
    b = 28 * np.power(2 * m * np.log(1 / delta), 0.25) * np.log(2 / delta) / np.sqrt(N * (1 - 2 * eta))
    c = np.power(32 * np.log(1 / delta) / m, 0.25) * np.sqrt(np.log(2 / delta))
    pref = np.sqrt(N) * (np.sqrt((1 + 2 * eta) / m) + np.power(2 * np.log(1 / delta) / m, 0.25))
    inner = (2 * np.log(1.25 / dp) / ((1 - 2 * eta) * eps**2)
             + 8 * np.sqrt(2) / (np.sqrt(N) * (1 - 2 * eta) * eps) * np.sqrt(np.log(1 / delta)))
    return (a + b + c) * f_norm + pref * np.sqrt(inner)


def test_bound_against_second_transcription():
    args = (10_000, 1000, 0.375, 0.05, 1.0, 1e-5, 1.0)
    val = eval_generalization_bound(*args)
    assert val > 0
    assert val == pytest.approx(_second_transcription(*args), rel=1e-13)


def test_bound_terms_and_scaling():
    t1 = generalization_bound_terms(1000, 100, 0.375, 0.05, 1.0, 1e-5, 1.0)
    t2 = generalization_bound_terms(2000, 100, 0.375, 0.05, 1.0, 1e-5, 1.0)
    assert t2.approximation / t1.approximation == pytest.approx(1 / math.sqrt(2), rel=1e-14)
    assert t1.total == pytest.approx(t1.nonprivate + t1.privacy)
    assert t1.privacy_one_minus_eta < t1.privacy
    assert "1-eta" in t1.note


def test_bound_decreasing_in_epsilon():
    vals = [eval_generalization_bound(4000, 500, 0.375, 0.1, e, 1e-5, 1.0) for e in np.linspace(0.05, 1, 20)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_nonprivate_terms_decrease_in_n():
    vals = [generalization_bound_terms(2**k, 500, 0.375, 0.1, 1.0, 1e-5, 1.0).nonprivate for k in range(10, 21)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("kw", [dict(eta=0.5), dict(delta=1.0), dict(epsilon=1.5), dict(delta_p=0.0),
                                dict(f_norm=0.0), dict(N=0)])
def test_bound_domain(kw):
    args = dict(N=100, m=10, eta=0.25, delta=0.1, epsilon=1.0, delta_p=1e-5, f_norm=1.0)
    args.update(kw)
    with pytest.raises(ValueError):
        eval_generalization_bound(**args)

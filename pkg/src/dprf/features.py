"""Random Fourier / cosine features, design matrices and kernel estimates.

Frequencies are drawn as ``omega_k ~ N(0, sigma_omega_sq * I_d)``; with that
choice the features approximate the Gaussian kernel

    k(x, x') = exp(-sigma_omega_sq * ||x - x'||^2 / 2).

The design matrix keeps the raw entries ``exp(i <omega_k, x_j>)`` (modulus 1),
while :func:`feature_map` applies the ``1/sqrt(N)`` normalisation used for
kernel estimates and Hessian traces.

Note on notation: the symbol sigma is overloaded in the literature for both
the frequency variance and the privacy noise variance.  Here the frequency
variance is always ``sigma_omega_sq`` and the noise variance lives in
:mod:`dprf.privacy` as ``noise_variance``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from dprf._seeding import make_rng

__all__ = [
    "FeatureKind",
    "FeatureSample",
    "DesignMatrix",
    "ConditionReport",
    "sample_features",
    "build_design_matrix",
    "feature_map",
    "kernel_estimate",
    "gaussian_kernel",
    "estimate_gamma_sq",
    "check_concentration_conditions",
]


class FeatureKind(str, enum.Enum):
    FOURIER = "fourier"
    COSINE = "cosine"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FeatureSample:
    """N sampled frequency vectors (and cosine offsets) plus their origin."""

    omegas: np.ndarray
    sigma_omega_sq: float
    seed: int
    kind: FeatureKind = FeatureKind.FOURIER
    offsets: np.ndarray | None = None

    def __post_init__(self):
        omegas = np.asarray(self.omegas, dtype=float)
        if omegas.ndim != 2 or omegas.shape[0] < 1 or omegas.shape[1] < 1:
            raise ValueError(f"omegas must be a non-empty N x d matrix, got shape {omegas.shape}")
        if not self.sigma_omega_sq > 0:
            raise ValueError(f"sigma_omega_sq must be positive, got {self.sigma_omega_sq}")
        kind = FeatureKind(self.kind)
        offsets = self.offsets
        if kind is FeatureKind.COSINE:
            if offsets is None:
                raise ValueError("cosine features require offsets")
            offsets = np.asarray(offsets, dtype=float)
            if offsets.shape != (omegas.shape[0],):
                raise ValueError("offsets must have one entry per feature")
            if np.any(np.abs(offsets) > math.pi):
                raise ValueError("offsets must lie in [-pi, pi]")
            offsets = _frozen(offsets)
        elif offsets is not None:
            raise ValueError("Fourier features carry no offsets")
        object.__setattr__(self, "omegas", _frozen(omegas))
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "kind", kind)

    @property
    def n_features(self) -> int:
        return self.omegas.shape[0]

    @property
    def dim(self) -> int:
        return self.omegas.shape[1]

    @property
    def is_complex(self) -> bool:
        return self.kind is FeatureKind.FOURIER


def sample_features(
    rng_seed: int,
    N: int,
    d: int,
    sigma_omega_sq: float,
    kind: FeatureKind | str = FeatureKind.FOURIER,
) -> FeatureSample:
    """Draw ``N`` Gaussian frequency vectors in ``R^d``.

    The first ``n`` rows for ``N > n`` coincide with the draw for ``n``
    under the same seed, so feature sets for a sweep over ``N`` are nested.
    """
    if int(N) < 1 or int(d) < 1:
        raise ValueError(f"N and d must be >= 1, got N={N}, d={d}")
    if not sigma_omega_sq > 0:
        raise ValueError(f"sigma_omega_sq must be positive, got {sigma_omega_sq}")
    kind = FeatureKind(kind)
    rng = make_rng(rng_seed)
    omegas = rng.normal(0.0, math.sqrt(sigma_omega_sq), size=(int(N), int(d)))
    offsets = None
    if kind is FeatureKind.COSINE:
        # separate stream so omegas agree between the two kinds
        offsets = make_rng(rng_seed, 1).uniform(-math.pi, math.pi, size=int(N))
    return FeatureSample(omegas=omegas, sigma_omega_sq=float(sigma_omega_sq),
                         seed=int(rng_seed), kind=kind, offsets=offsets)


@dataclass(frozen=True)
class DesignMatrix:
    """Unnormalised random feature matrix, ``m`` samples by ``N`` features."""

    entries: np.ndarray
    kind: FeatureKind = FeatureKind.FOURIER
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        entries = np.asarray(self.entries)
        if entries.ndim != 2:
            raise ValueError("design matrix must be two-dimensional")
        object.__setattr__(self, "entries", _frozen(entries))
        object.__setattr__(self, "kind", FeatureKind(self.kind))

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def N(self) -> int:
        return self.entries.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.entries
        return self.entries.astype(dtype)


def _check_inputs(features: FeatureSample, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != features.dim:
        raise ValueError(
            f"input has {X.shape[-1] if X.ndim else 0} columns but features expect d={features.dim}"
        )
    return X


def _phases(features: FeatureSample, X: np.ndarray) -> np.ndarray:
    return X @ features.omegas.T


def build_design_matrix(features: FeatureSample, X) -> DesignMatrix:
    X = _check_inputs(features, X)
    theta = _phases(features, X)
    if features.kind is FeatureKind.FOURIER:
        entries = np.exp(1j * theta)
    else:
        entries = np.cos(theta + features.offsets)
    return DesignMatrix(entries=entries, kind=features.kind)


def feature_map(features: FeatureSample, X) -> np.ndarray:
    """Normalised feature vectors, one row per input.

    Fourier rows are ``exp(i <omega, x>) / sqrt(N)`` and have unit norm.
    Cosine rows are ``sqrt(2/N) cos(<omega, x> + b)``; the extra ``sqrt 2``
    makes their inner products estimate the same Gaussian kernel.
    """
    A = build_design_matrix(features, X).entries
    N = features.n_features
    if features.kind is FeatureKind.FOURIER:
        return A / math.sqrt(N)
    return A * math.sqrt(2.0 / N)


def kernel_estimate(features: FeatureSample, x, x_prime) -> complex | float:
    """Monte Carlo kernel value ``<phi(x), phi(x')>`` (conjugate-linear in ``x'``)."""
    x = np.asarray(x, dtype=float).ravel()
    x_prime = np.asarray(x_prime, dtype=float).ravel()
    if x.shape != (features.dim,) or x_prime.shape != (features.dim,):
        raise ValueError(f"points must have dimension d={features.dim}")
    phi = feature_map(features, np.vstack([x, x_prime]))
    value = np.sum(phi[0] * np.conj(phi[1]))
    if features.kind is FeatureKind.FOURIER:
        return complex(value)
    return float(np.real(value))


def gaussian_kernel(x, x_prime, sigma_omega_sq: float) -> float:
    """Closed-form kernel approximated by Gaussian frequencies."""
    diff = np.asarray(x, dtype=float) - np.asarray(x_prime, dtype=float)
    return float(np.exp(-0.5 * sigma_omega_sq * np.dot(diff, diff)))


def estimate_gamma_sq(X) -> float:
    """Data variance parameter: ``d`` times the mean per-coordinate variance."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least two samples to estimate the data variance")
    return float(X.shape[1] * np.mean(np.var(X, axis=0, ddof=1)))


@dataclass(frozen=True)
class ConditionReport:
    d_ok: bool
    variance_ok: bool
    n_ok: bool
    required_d: float
    required_variance_product: float
    required_N: float
    observed_variance_product: float
    constants_used: tuple[float, float]

    @property
    def all_ok(self) -> bool:
        return self.d_ok and self.variance_ok and self.n_ok


def check_concentration_conditions(
    m: int,
    d: int,
    N: int,
    eta: float,
    delta: float,
    gamma_sq: float,
    sigma_omega_sq: float,
    constants: tuple[float, float] = (1.0, 1.0),
    allow_large_eta: bool = False,
) -> ConditionReport:
    """Evaluate the three sufficient conditions for Gram-matrix concentration.

    ``||(1/N) A A^* - I||_2 <= 2 eta`` holds with probability ``1 - 3 delta``
    when

    * ``d >= C1 log(m / delta)``
    * ``gamma_sq * sigma_omega_sq >= 4 log(2 m / eta)``
    * ``N >= C2 eta^-2 m log(2 m / delta)``

    The constants are only known to exist, so they default to 1 and the
    thresholds are reported instead of enforced.  ``eta`` must lie in
    ``(0, 1/2)``, the range in which the sensitivity calibration is defined;
    ``allow_large_eta`` widens this to ``(0, 1)``, where the concentration
    statement itself is still meaningful.
    """
    upper = 1.0 if allow_large_eta else 0.5
    if not 0 < eta < upper:
        raise ValueError(f"eta must lie in the open interval (0, {upper:g}), got {eta}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in the open interval (0, 1), got {delta}")
    if m < 1 or d < 1 or N < 1:
        raise ValueError("m, d and N must be >= 1")
    if not gamma_sq > 0 or not sigma_omega_sq > 0:
        raise ValueError("gamma_sq and sigma_omega_sq must be positive")
    c1, c2 = (float(c) for c in constants)
    if c1 <= 0 or c2 <= 0:
        raise ValueError("constants must be positive")
    required_d = c1 * math.log(m / delta)
    required_var = 4.0 * math.log(2 * m / eta)
    required_n = c2 * m * math.log(2 * m / delta) / eta**2
    observed_var = gamma_sq * sigma_omega_sq
    return ConditionReport(
        d_ok=d >= required_d,
        variance_ok=observed_var >= required_var,
        n_ok=N >= required_n,
        required_d=required_d,
        required_variance_product=required_var,
        required_N=required_n,
        observed_variance_product=observed_var,
        constants_used=(c1, c2),
    )

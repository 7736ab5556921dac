"""Output perturbation for random feature coefficients.

The Gaussian route releases ``c + z`` with ``z ~ N(0, sigma^2 I)`` where

    Delta   = 2 / sqrt(N (1 - 2 eta))
    sigma^2 = 2 ln(1.25 / delta_p) Delta^2 / epsilon^2

Complex coefficient vectors are treated as points of ``R^{2N}``: real and
imaginary parts each receive independent ``N(0, sigma^2)`` noise.  The
complex l2 norm equals the ``R^{2N}`` norm, so the sensitivity carries over
unchanged.

The Gamma route adds noise with density proportional to
``exp(-xi ||b||_2)``, ``xi = epsilon / Delta``, sampled as a
``Gamma(dim, rate=xi)`` radius along a uniform direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from dprf._seeding import make_rng
from dprf.solvers import Coefficients, SolverKind

__all__ = [
    "PrivacyParams",
    "GaussianMechanism",
    "GammaMechanism",
    "PrivatizedCoefficients",
    "PrivateLinearWeights",
    "gaussian_sensitivity",
    "gaussian_noise_variance",
    "calibrate_gaussian",
    "check_label_norm",
    "privatize",
    "ridge_linear",
    "default_linear_lambda",
    "dp_linear_baseline",
]


def _check_epsilon(epsilon: float) -> None:
    if not 0 < epsilon <= 1:
        raise ValueError(
            f"epsilon must lie in (0, 1]; the Gaussian mechanism guarantee is stated "
            f"for epsilon in (0, 1), got {epsilon}"
        )


def _check_delta_p(delta_p: float) -> None:
    if not 0 < delta_p < 1:
        raise ValueError(f"delta_p must lie in (0, 1), got {delta_p}")


def gaussian_sensitivity(N: int, eta: float) -> float:
    """High-probability l2 sensitivity ``2 / sqrt(N (1 - 2 eta))`` of the min-norm coefficients."""
    if int(N) < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if not 0 < eta < 0.5:
        raise ValueError(f"eta must lie in (0, 1/2); the sensitivity diverges as eta -> 1/2, got {eta}")
    return 2.0 / math.sqrt(N * (1.0 - 2.0 * eta))


def gaussian_noise_variance(sensitivity: float, epsilon: float, delta_p: float) -> float:
    return 2.0 * math.log(1.25 / delta_p) * sensitivity**2 / epsilon**2


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta_p: float
    eta: float
    n_features: int
    sensitivity: float
    noise_variance: float

    @classmethod
    def noiseless(cls, n_features: int, eta: float = 0.375) -> "PrivacyParams":
        """Zero-variance parameters (the epsilon -> infinity limit), for tests only."""
        return cls(epsilon=math.inf, delta_p=0.5, eta=eta, n_features=int(n_features),
                   sensitivity=gaussian_sensitivity(n_features, eta), noise_variance=0.0)


def check_label_norm(y, tol: float = 1e-12) -> float:
    """Raise unless ``||y||_2 <= 1``, the precondition of the sensitivity bound."""
    norm = float(np.linalg.norm(np.asarray(y, dtype=float)))
    if norm > 1.0 + tol:
        raise ValueError(
            f"training labels have ||y||_2 = {norm:.6g} > 1; the sensitivity bound "
            f"2/sqrt(N(1-2 eta)) only holds for ||y||_2 <= 1 (normalise the labels)"
        )
    return norm


def calibrate_gaussian(N: int, eta: float, epsilon: float, delta_p: float, labels=None) -> PrivacyParams:
    _check_epsilon(epsilon)
    _check_delta_p(delta_p)
    if labels is not None:
        check_label_norm(labels)
    sens = gaussian_sensitivity(N, eta)
    return PrivacyParams(
        epsilon=float(epsilon),
        delta_p=float(delta_p),
        eta=float(eta),
        n_features=int(N),
        sensitivity=sens,
        noise_variance=gaussian_noise_variance(sens, epsilon, delta_p),
    )


def _real_dim(n: int, complex_: bool) -> int:
    return 2 * n if complex_ else n


def _to_coefficient_space(z: np.ndarray, n: int, complex_: bool) -> np.ndarray:
    if complex_:
        return z[..., :n] + 1j * z[..., n:]
    return z


@dataclass(frozen=True)
class GaussianMechanism:
    params: PrivacyParams
    name: str = field(default="gaussian", init=False)

    @property
    def noise_variance(self) -> float:
        return self.params.noise_variance

    def sample_real(self, rng: np.random.Generator, size: int, dim: int) -> np.ndarray:
        """``size`` noise vectors in ``R^dim``, shape ``(size, dim)``."""
        sigma = math.sqrt(self.params.noise_variance)
        return sigma * rng.standard_normal((size, dim))

    def sample(self, rng: np.random.Generator, n: int, complex_: bool) -> np.ndarray:
        z = self.sample_real(rng, 1, _real_dim(n, complex_))[0]
        return _to_coefficient_space(z, n, complex_)


@dataclass(frozen=True)
class GammaMechanism:
    epsilon: float
    sensitivity: float
    eta: float | None = None
    name: str = field(default="gamma", init=False)

    def __post_init__(self):
        if not self.epsilon > 0 or not self.sensitivity > 0:
            raise ValueError("Gamma mechanism needs positive epsilon and sensitivity")

    @classmethod
    def from_params(cls, params: PrivacyParams) -> "GammaMechanism":
        return cls(epsilon=params.epsilon, sensitivity=params.sensitivity, eta=params.eta)

    @property
    def xi(self) -> float:
        return self.epsilon / self.sensitivity

    def sample_real(self, rng: np.random.Generator, size: int, dim: int) -> np.ndarray:
        g = rng.standard_normal((size, dim))
        directions = g / np.linalg.norm(g, axis=1, keepdims=True)
        radii = rng.gamma(shape=dim, scale=1.0 / self.xi, size=size)
        return radii[:, None] * directions

    def sample(self, rng: np.random.Generator, n: int, complex_: bool) -> np.ndarray:
        z = self.sample_real(rng, 1, _real_dim(n, complex_))[0]
        return _to_coefficient_space(z, n, complex_)


Mechanism = GaussianMechanism | GammaMechanism


@dataclass(frozen=True)
class PrivatizedCoefficients:
    """Released coefficients.  The pre-noise vector is not retained."""

    values: np.ndarray
    mechanism: Mechanism
    noise_seed: int
    source: SolverKind
    source_meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.array(self.values, copy=True)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def provenance(self) -> str:
        return f"privatized[{self.mechanism.name}]({self.source.value})"


def privatize(c: Coefficients, mechanism: Mechanism, rng_seed: int) -> PrivatizedCoefficients:
    values = np.asarray(c.values)
    n = values.shape[0]
    if isinstance(mechanism, GaussianMechanism):
        if mechanism.params.n_features != n:
            raise ValueError(
                f"privacy parameters were calibrated for N={mechanism.params.n_features} "
                f"but the coefficient vector has length {n}"
            )
    elif not isinstance(mechanism, GammaMechanism):
        raise ValueError(f"unsupported mechanism {mechanism!r}")
    z = mechanism.sample(make_rng(rng_seed), n, np.iscomplexobj(values))
    return PrivatizedCoefficients(
        values=values + z,
        mechanism=mechanism,
        noise_seed=int(rng_seed),
        source=c.provenance,
        source_meta=dict(c.meta),
    )


def ridge_linear(X, y, lam: float) -> np.ndarray:
    """Weights minimising ``(1/m) ||X w - y||^2 + lam ||w||^2`` (no intercept)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    m, d = X.shape
    if y.shape != (m,):
        raise ValueError("labels must have one entry per row of X")
    return np.linalg.solve(X.T @ X + m * lam * np.eye(d), X.T @ y)


def default_linear_lambda(N: int, m: int) -> float:
    """``lam = sqrt(N) / (2 m)``: makes ``2 / (m lam)`` equal the feature sensitivity ``4 / sqrt(N)``."""
    return math.sqrt(N) / (2.0 * m)


@dataclass(frozen=True)
class PrivateLinearWeights:
    values: np.ndarray
    lam: float
    sensitivity: float
    noise_variance: float
    epsilon: float
    delta_p: float
    noise_seed: int

    @property
    def mechanism(self) -> GaussianMechanism:
        d = self.values.shape[0]
        return GaussianMechanism(PrivacyParams(self.epsilon, self.delta_p, math.nan, d,
                                               self.sensitivity, self.noise_variance))


def dp_linear_baseline(
    X,
    y,
    lam: float | None = None,
    epsilon: float = 1.0,
    delta_p: float = 1e-5,
    rng_seed: int = 0,
    n_features: int | None = None,
    noiseless: bool = False,
) -> PrivateLinearWeights:
    """Gaussian output perturbation of regularised linear least squares.

    The coefficient sensitivity is ``2 / (m lam)``.  When ``lam`` is omitted
    it is set from ``n_features`` so that the noise matches a random feature
    model with ``eta = 3/8``.  ``noiseless`` skips the noise (test hook).
    """
    X = np.asarray(X, dtype=float)
    m = X.shape[0]
    if lam is None:
        if n_features is None:
            raise ValueError("either lam or n_features must be given")
        lam = default_linear_lambda(n_features, m)
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    _check_epsilon(epsilon)
    _check_delta_p(delta_p)
    w = ridge_linear(X, y, lam)
    sens = 2.0 / (m * lam)
    var = 0.0 if noiseless else gaussian_noise_variance(sens, epsilon, delta_p)
    noise = math.sqrt(var) * make_rng(rng_seed).standard_normal(w.shape[0])
    return PrivateLinearWeights(values=w + noise, lam=float(lam), sensitivity=sens, noise_variance=var,
                                epsilon=float(epsilon), delta_p=float(delta_p), noise_seed=int(rng_seed))

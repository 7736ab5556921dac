"""Prediction, test error, excessive risk gaps, Hessian traces and statistical parity."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from dprf._seeding import make_rng
from dprf.features import FeatureSample, build_design_matrix, feature_map
from dprf.privacy import GammaMechanism, GaussianMechanism, PrivatizedCoefficients
from dprf.solvers import Coefficients

__all__ = [
    "PredictionConvention",
    "TrainedModel",
    "LinearModel",
    "FairnessReport",
    "predict",
    "test_error",
    "excessive_risk_gap",
    "erg_approximation",
    "hessian_trace",
    "ks_distance",
    "ks_distance_exact",
    "statistical_parity",
]


class PredictionConvention(str, enum.Enum):
    REAL_PART = "real"
    COMPLEX = "complex"


@dataclass(frozen=True)
class TrainedModel:
    """Random feature model ``f(x) = sum_k c_k exp(i <omega_k, x>)``."""

    features: FeatureSample
    coefficients: Coefficients | PrivatizedCoefficients
    prediction_convention: PredictionConvention = PredictionConvention.REAL_PART

    def __post_init__(self):
        if len(self.coefficients) != self.features.n_features:
            raise ValueError(
                f"coefficient length {len(self.coefficients)} != feature count {self.features.n_features}"
            )
        object.__setattr__(self, "prediction_convention", PredictionConvention(self.prediction_convention))

    @property
    def parameters(self) -> np.ndarray:
        return np.asarray(self.coefficients.values)

    def design(self, X) -> np.ndarray:
        return build_design_matrix(self.features, X).entries

    def finalize(self, raw: np.ndarray) -> np.ndarray:
        if self.prediction_convention is PredictionConvention.REAL_PART:
            return np.real(raw)
        return raw

    def predict(self, X) -> np.ndarray:
        return self.finalize(self.design(X) @ self.parameters)

    def imaginary_magnitude(self, X) -> float:
        """Largest ``|Im f(x)|`` over ``X``; zero for cosine features."""
        return float(np.max(np.abs(np.imag(self.design(X) @ self.parameters)), initial=0.0))


@dataclass(frozen=True)
class LinearModel:
    """Plain linear predictor ``f(x) = <w, x>`` (no intercept)."""

    weights: np.ndarray

    @property
    def parameters(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    def design(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.parameters.shape[0]:
            raise ValueError("input dimension does not match the weight vector")
        return X

    def finalize(self, raw: np.ndarray) -> np.ndarray:
        return raw

    def predict(self, X) -> np.ndarray:
        return self.design(X) @ self.parameters


def predict(model: TrainedModel | LinearModel, X) -> np.ndarray:
    return model.predict(X)


def test_error(model: TrainedModel | LinearModel, X, y) -> float:
    """Mean squared error over a held-out set."""
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("test set is empty")
    pred = model.predict(X)
    if pred.shape != y.shape:
        raise ValueError("prediction and label shapes differ")
    return float(np.mean(np.abs(y - pred) ** 2))


# pytest would otherwise try to collect the function above
test_error.__test__ = False


@dataclass
class FairnessReport:
    population_excessive_risk: float | None = None
    per_group_excessive_risk: dict = field(default_factory=dict)
    per_group_gap: dict = field(default_factory=dict)
    hessian_traces: dict = field(default_factory=dict)
    sp_score: float | None = None
    repetitions: int = 0
    noise_variance: float | None = None
    approximate_gap: dict = field(default_factory=dict)


def _group_index(groups, n: int) -> dict:
    groups = np.asarray(groups)
    if groups.shape != (n,):
        raise ValueError("groups must label every row")
    index = {}
    for g in sorted(set(groups.tolist()), key=str):
        index[g] = np.flatnonzero(groups == g)
    return index


def excessive_risk_gap(
    non_private: TrainedModel | LinearModel,
    mechanism: GaussianMechanism | GammaMechanism,
    X,
    y,
    groups,
    repetitions: int = 100,
    rng_seed: int = 0,
) -> FairnessReport:
    """Monte Carlo excessive risk for the population and each group.

    Each repetition perturbs the parameters once and the same perturbed model
    is scored on the whole dataset and on every group, so the per-group gaps
    ``|R(D) - R(D_a)|`` share their noise draws.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    y = np.asarray(y, dtype=float)
    M = non_private.design(X)
    theta = non_private.parameters
    index = _group_index(groups, y.shape[0])
    for g, idx in index.items():
        if idx.size == 0:
            raise ValueError(f"group {g!r} is empty")
    base_raw = M @ theta
    base_loss = np.abs(non_private.finalize(base_raw) - y) ** 2
    complex_ = np.iscomplexobj(theta)
    n = theta.shape[0]
    pop = np.empty(repetitions)
    per_group = {g: np.empty(repetitions) for g in index}
    for r in range(repetitions):
        z = mechanism.sample(make_rng(rng_seed, r), n, complex_)
        loss = np.abs(non_private.finalize(base_raw + M @ z) - y) ** 2 - base_loss
        pop[r] = loss.mean()
        for g, idx in index.items():
            per_group[g][r] = loss[idx].mean()
    report = FairnessReport(repetitions=repetitions)
    report.population_excessive_risk = float(pop.mean())
    for g in index:
        risk = float(per_group[g].mean())
        report.per_group_excessive_risk[g] = risk
        report.per_group_gap[g] = abs(report.population_excessive_risk - risk)
    X = np.asarray(X, dtype=float)
    if isinstance(non_private, TrainedModel):
        kind, feats = "random_features", non_private.features
    else:
        kind, feats = "linear", None
    report.hessian_traces = {g: hessian_trace(X[idx], kind, feats) for g, idx in index.items()}
    if isinstance(mechanism, GaussianMechanism):
        report.noise_variance = mechanism.noise_variance
        report.approximate_gap = erg_approximation(
            mechanism.noise_variance, report.hessian_traces, hessian_trace(X, kind, feats)
        )
    return report


def hessian_trace(X, model_kind: str = "linear", features: FeatureSample | None = None) -> float:
    """Trace proxy ``E_{x in group} ||x||^2`` for the given input representation.

    ``model_kind="linear"`` uses raw inputs; ``"random_features"`` uses the
    normalised feature map, which has unit norm for Fourier features.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("group is empty")
    if model_kind == "linear":
        return float(np.mean(np.sum(X**2, axis=1)))
    if model_kind == "random_features":
        if features is None:
            raise ValueError("random feature traces need the feature sample")
        phi = feature_map(features, X)
        return float(np.mean(np.sum(np.abs(phi) ** 2, axis=1)))
    raise ValueError(f"unknown model kind {model_kind!r}")


def erg_approximation(noise_variance: float, group_traces: Mapping, population_trace: float) -> dict:
    """Second-order estimate ``1/2 sigma^2 |Tr(H_a) - Tr(H)|`` per group."""
    return {g: 0.5 * noise_variance * abs(t - population_trace) for g, t in group_traces.items()}


def _ecdf(samples: np.ndarray, points: np.ndarray) -> np.ndarray:
    s = np.sort(samples)
    return np.searchsorted(s, points, side="right") / s.size


def ks_distance(p_samples, q_samples, grid_resolution: int = 500) -> float:
    """Kolmogorov-Smirnov distance evaluated on a uniform grid.

    The grid has ``grid_resolution`` points spanning ``[min, max]`` of the
    pooled samples, endpoints included.
    """
    p = np.asarray(p_samples, dtype=float).ravel()
    q = np.asarray(q_samples, dtype=float).ravel()
    if p.size == 0 or q.size == 0:
        raise ValueError("both sample sets must be non-empty")
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be >= 2")
    pooled = np.concatenate([p, q])
    grid = np.linspace(pooled.min(), pooled.max(), int(grid_resolution))
    return float(np.max(np.abs(_ecdf(p, grid) - _ecdf(q, grid))))


def ks_distance_exact(p_samples, q_samples) -> float:
    """Exact sup-distance between empirical CDFs (evaluated at every pooled sample)."""
    p = np.asarray(p_samples, dtype=float).ravel()
    q = np.asarray(q_samples, dtype=float).ravel()
    if p.size == 0 or q.size == 0:
        raise ValueError("both sample sets must be non-empty")
    pts = np.unique(np.concatenate([p, q]))
    return float(np.max(np.abs(_ecdf(p, pts) - _ecdf(q, pts))))


def statistical_parity(outputs_by_group: Mapping, grid_resolution: int = 500) -> float:
    """Largest pairwise KS distance between per-group output distributions."""
    if len(outputs_by_group) == 0:
        raise ValueError("need at least one group")
    for g, v in outputs_by_group.items():
        if np.asarray(v).size == 0:
            raise ValueError(f"group {g!r} has no outputs")
    best = 0.0
    for a, b in itertools.combinations(outputs_by_group, 2):
        best = max(best, ks_distance(outputs_by_group[a], outputs_by_group[b], grid_resolution))
    return best


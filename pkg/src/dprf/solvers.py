"""Coefficient solvers for random feature regression.

All solvers work on the unnormalised design matrix ``A`` and return
coefficients ``c`` with predictions ``A @ c``.  Complex design matrices
produce complex coefficients even for real targets.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from dprf._seeding import make_rng
from dprf.features import DesignMatrix

__all__ = [
    "SolverKind",
    "Coefficients",
    "SingularSystemError",
    "solve_min_norm",
    "solve_kaczmarz",
    "solve_sgd",
    "solve_ridge",
    "relative_residual",
    "row_space_gap",
]


class SingularSystemError(np.linalg.LinAlgError):
    """The Gram matrix is too ill-conditioned for the requested solve."""


class SolverKind(str, enum.Enum):
    MIN_NORM_GRAM = "min_norm_gram"
    MIN_NORM_SVD = "min_norm_svd"
    KACZMARZ = "kaczmarz"
    SGD = "sgd"
    RIDGE = "ridge"


@dataclass(frozen=True)
class Coefficients:
    values: np.ndarray
    provenance: SolverKind
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.array(self.values, copy=True)
        if v.ndim != 1:
            raise ValueError("coefficients must be a vector")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "provenance", SolverKind(self.provenance))

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)


def _matrix(A) -> np.ndarray:
    if isinstance(A, DesignMatrix):
        return A.entries
    A = np.asarray(A)
    if A.ndim != 2:
        raise ValueError("design matrix must be two-dimensional")
    if not np.iscomplexobj(A):
        A = A.astype(float)
    return A


def _targets(A: np.ndarray, y) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != A.shape[0]:
        raise ValueError(f"targets must be a vector of length m={A.shape[0]}, got shape {y.shape}")
    return y


def relative_residual(A, c, y) -> float:
    """``||A c - y|| / ||y||`` (absolute residual when ``y = 0``)."""
    A = _matrix(A)
    r = np.linalg.norm(A @ np.asarray(c) - np.asarray(y))
    ny = np.linalg.norm(y)
    return float(r / ny) if ny > 0 else float(r)


def row_space_gap(A, c) -> float:
    """Distance from ``c`` to the row space of ``A``, relative to ``||c||``."""
    A = _matrix(A)
    c = np.asarray(c)
    nc = np.linalg.norm(c)
    if nc == 0:
        return 0.0
    proj = A.conj().T @ np.linalg.lstsq(A @ A.conj().T, A @ c, rcond=None)[0]
    return float(np.linalg.norm(c - proj) / nc)


def _gram(A: np.ndarray) -> np.ndarray:
    G = A @ A.conj().T
    # symmetrise away round-off so the Hermitian routines see an exact Hermitian matrix
    return 0.5 * (G + G.conj().T)


def _cholesky_solve(G: np.ndarray, b: np.ndarray, tol: float) -> np.ndarray:
    eig = np.linalg.eigvalsh(G)
    lo, hi = float(eig[0]), float(eig[-1])
    if hi <= 0 or lo < tol * hi:
        raise SingularSystemError(
            f"Gram matrix is numerically singular: smallest eigenvalue {lo:.3e} < "
            f"tol {tol:.1e} x largest eigenvalue {hi:.3e}"
        )
    factor = scipy.linalg.cho_factor(G, lower=True, check_finite=False)
    return scipy.linalg.cho_solve(factor, b, check_finite=False)


def solve_min_norm(A, y, method: str = "gram", tol: float = 1e-10) -> Coefficients:
    """Minimum-norm interpolant ``argmin ||c||`` subject to ``A c = y``.

    ``method="gram"`` solves ``c = A^* (A A^*)^{-1} y`` with a Cholesky
    factorisation of the Gram matrix and refuses near-singular systems.
    ``method="svd"`` applies the pseudoinverse with singular values below
    ``tol * s_max`` truncated.
    """
    A = _matrix(A)
    y = _targets(A, y)
    m, N = A.shape
    if N < m:
        raise ValueError(f"min-norm interpolation needs N >= m (over-parametrised), got N={N}, m={m}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    method = method.lower()
    if method == "gram":
        w = _cholesky_solve(_gram(A), y.astype(A.dtype, copy=False), tol)
        c = A.conj().T @ w
        kind = SolverKind.MIN_NORM_GRAM
    elif method in ("svd", "pinv"):
        U, s, Vh = np.linalg.svd(A, full_matrices=False)
        keep = s > tol * s[0] if s.size else np.zeros(0, bool)
        c = Vh[keep].conj().T @ ((U[:, keep].conj().T @ y) / s[keep])
        kind = SolverKind.MIN_NORM_SVD
    else:
        raise ValueError(f"unknown min-norm method {method!r}; expected 'gram' or 'svd'")
    return Coefficients(c, kind, {"tol": tol, "residual": relative_residual(A, c, y)})


def solve_ridge(A, y, lam: float) -> Coefficients:
    """Minimiser of ``(1/m) ||A c - y||^2 + lam ||c||^2``.

    Computed in the dual form ``c = A^* (A A^* + m lam I)^{-1} y``.
    """
    A = _matrix(A)
    y = _targets(A, y)
    if not lam >= 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    m = A.shape[0]
    G = _gram(A) + m * lam * np.eye(m)
    if lam == 0:
        w = _cholesky_solve(G, y.astype(G.dtype, copy=False), 1e-10)
    else:
        factor = scipy.linalg.cho_factor(G, lower=True, check_finite=False)
        w = scipy.linalg.cho_solve(factor, y.astype(G.dtype, copy=False), check_finite=False)
    c = A.conj().T @ w
    return Coefficients(c, SolverKind.RIDGE, {"lambda": lam, "residual": relative_residual(A, c, y)})


def solve_kaczmarz(
    A,
    y,
    iters: int,
    rng_seed: int = 0,
    checkpoints: Sequence[int] = (),
) -> Coefficients:
    """Randomised Kaczmarz from ``c = 0``.

    Row ``j`` is drawn uniformly; Fourier design rows all have norm
    ``sqrt(N)``, so uniform sampling coincides with the norm-proportional
    rule.  Each step projects onto ``{c : a_j c = y_j}``.

    ``checkpoints`` lists iteration counts at which ``||A c - y||`` is
    recorded into ``meta["residual_history"]``.
    """
    A = _matrix(A)
    y = _targets(A, y)
    iters = int(iters)
    if iters < 1:
        raise ValueError("iters must be >= 1")
    m, N = A.shape
    dtype = np.result_type(A.dtype, y.dtype, float)
    c = np.zeros(N, dtype=dtype)
    row_sq = np.einsum("ij,ij->i", A, A.conj()).real
    zero_rows = row_sq == 0
    if zero_rows.any():
        warnings.warn(f"{int(zero_rows.sum())} zero row(s) in design matrix are skipped", RuntimeWarning)
    A_conj = A.conj()
    rows = make_rng(rng_seed).integers(0, m, size=iters)
    marks = {int(t) for t in checkpoints}
    history = []
    skipped = 0
    for t, j in enumerate(rows, start=1):
        if zero_rows[j]:
            skipped += 1
        else:
            c += ((y[j] - A[j] @ c) / row_sq[j]) * A_conj[j]
        if t in marks:
            history.append((t, float(np.linalg.norm(A @ c - y))))
    meta = {"iters": iters, "skipped": skipped, "residual": relative_residual(A, c, y)}
    if history:
        meta["residual_history"] = history
    return Coefficients(c, SolverKind.KACZMARZ, meta)


def solve_sgd(
    A,
    y,
    learning_rate: float | None = None,
    iters: int | None = None,
    rng_seed: int = 0,
    normalize_features: bool = True,
) -> Coefficients:
    """Single-sample SGD on the squared loss ``(f(x_j) - y_j)^2`` from zero.

    Defaults follow the usual baseline settings: ``learning_rate = 1/m`` and
    ``iters = m``.  With ``normalize_features`` the steps are taken in the
    ``1/sqrt(N)``-normalised feature parametrisation (the one in which a
    ``1/m`` step size is meaningful); the returned coefficients are mapped
    back so that predictions are still ``A @ c``.  Without it the update is
    literally ``c <- c - lr * 2 (a_j c - y_j) conj(a_j)``, which diverges for
    ``N > m``.
    """
    A = _matrix(A)
    y = _targets(A, y)
    m, N = A.shape
    lr = 1.0 / m if learning_rate is None else float(learning_rate)
    iters = m if iters is None else int(iters)
    if lr < 0:
        raise ValueError("learning_rate must be non-negative")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    step = lr / N if normalize_features else lr
    dtype = np.result_type(A.dtype, y.dtype, float)
    c = np.zeros(N, dtype=dtype)
    A_conj = A.conj()
    rows = make_rng(rng_seed).integers(0, m, size=iters)
    for j in rows:
        c -= (2.0 * step * (A[j] @ c - y[j])) * A_conj[j]
    meta = {
        "iters": iters,
        "learning_rate": lr,
        "normalize_features": normalize_features,
        "residual": relative_residual(A, c, y),
    }
    return Coefficients(c, SolverKind.SGD, meta)


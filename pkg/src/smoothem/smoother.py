"""Penalized least-squares spline smoothing with an observation mask."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse

from .bspline import KnotVector, PenaltyMatrix, spline_values


class SingularSystemError(np.linalg.LinAlgError):
    """The penalized normal equations could not be factorized."""


class DegenerateSmootherError(ValueError):
    """The hat-matrix trace reached the number of observations."""


@dataclass(frozen=True)
class SmoothFit:
    """Result of :func:`fit`.

    ``fitted`` covers every observation, including masked-out ones.
    """

    coefficients: np.ndarray
    lam: float
    included: np.ndarray
    fitted: np.ndarray
    n_used: int

    def roughness(self, P: PenaltyMatrix) -> float:
        return P.quad(self.coefficients)


def _as_penalty(P) -> np.ndarray:
    return P.matrix if isinstance(P, PenaltyMatrix) else np.asarray(P, dtype=float)


def _apply_penalty(P, a: np.ndarray) -> np.ndarray:
    # through the factors when available: exact zero on the penalty null space
    if isinstance(P, PenaltyMatrix) and P.difference is not None and P.gram is not None:
        return P.difference.T @ (P.gram @ (P.difference @ a))
    return _as_penalty(P) @ a


def _bandwidth(A: np.ndarray) -> int:
    rows, cols = np.nonzero(A)
    return int(np.max(np.abs(rows - cols))) if rows.size else 0


def _to_lower_banded(A: np.ndarray, u: int) -> np.ndarray:
    K = A.shape[0]
    ab = np.zeros((u + 1, K))
    for d in range(u + 1):
        ab[d, : K - d] = np.diagonal(A, -d)
    return ab


class _Factor:
    """Cholesky factor of a symmetric positive definite system, banded when profitable."""

    def __init__(self, H: np.ndarray):
        K = H.shape[0]
        u = _bandwidth(H)
        self.banded = 2 * u + 1 < K
        if self.banded:
            self._u = u
            self._cb = linalg.cholesky_banded(_to_lower_banded(H, u), lower=True, check_finite=False)
        else:
            self._cf = linalg.cho_factor(H, lower=True, check_finite=False)

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.banded:
            return linalg.cho_solve_banded((self._cb, True), b, check_finite=False)
        return linalg.cho_solve(self._cf, b, check_finite=False)


def _factorize(H: np.ndarray) -> _Factor:
    try:
        return _Factor(H)
    except linalg.LinAlgError:
        pass
    jitter = 1e-10 * np.trace(H) / H.shape[0]
    try:
        return _Factor(H + jitter * np.eye(H.shape[0]))
    except linalg.LinAlgError as exc:
        raise SingularSystemError("penalized normal equations are singular") from exc


def _normal_equations(N, y, mask, lam, P):
    n = N.shape[0]
    y = np.asarray(y, dtype=float)
    if y.shape != (n,):
        raise ValueError(f"y has shape {y.shape}, expected ({n},)")
    if mask is None:
        mask = np.ones(n, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise ValueError("mask length does not match design")
    n_used = int(mask.sum())
    if n_used < 1:
        raise ValueError("mask must select at least one observation")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    Ni = N[mask] if not sparse.issparse(N) else N.tocsr()[mask]
    gram = Ni.T @ Ni
    gram = gram.toarray() if sparse.issparse(gram) else np.asarray(gram)
    H = gram / n_used + lam * _as_penalty(P)
    rhs = np.asarray(Ni.T @ y[mask]).ravel() / n_used
    return H, rhs, mask, n_used, gram


def _solve_refined(factor: _Factor, gram, n_used, lam, P, rhs, max_steps: int = 30) -> np.ndarray:
    """Solve ``H x = rhs`` with the factor, then polish by iterative refinement.

    For large ``lam`` the system is badly conditioned and components in the
    penalty null space (e.g. constants) lose accuracy; residuals computed with
    the factored penalty recover them. Refinement stops once the correction is
    at rounding level. ``rhs`` may be a vector or a matrix.
    """
    x = factor.solve(rhs)
    for _ in range(max_steps):
        r = rhs - (gram @ x / n_used + lam * _apply_penalty(P, x))
        dx = factor.solve(r)
        x = x + dx
        if np.max(np.abs(dx)) <= 1e-15 * max(np.max(np.abs(x)), 1e-300):
            break
    return x


def fit(N, y, lam: float, P, mask=None) -> SmoothFit:
    """Minimize ``|y_inc - N_inc a|^2 / n_used + lam * a' P a`` over included rows.

    Parameters
    ----------
    N : array-like or sparse matrix, shape (n, K)
        Design matrix for all observations.
    y : array-like, shape (n,)
    lam : float
        Nonnegative smoothing parameter.
    P : PenaltyMatrix or array-like, shape (K, K)
    mask : array-like of bool, shape (n,), optional
        Observations used in the fit. All by default.

    Returns
    -------
    SmoothFit
        Fitted values are reported for every row of ``N``.

    Raises
    ------
    SingularSystemError
        If the system stays singular after one diagonal jitter retry.
    """
    H, rhs, mask, n_used, gram = _normal_equations(N, y, mask, lam, P)
    a = _solve_refined(_factorize(H), gram, n_used, lam, P, rhs)
    fitted = np.asarray(N @ a).ravel()
    return SmoothFit(a, float(lam), mask, fitted, n_used)


def predict(sfit: SmoothFit, kv: KnotVector, xs) -> np.ndarray:
    return spline_values(kv, sfit.coefficients, xs)


def residuals(sfit: SmoothFit, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != sfit.fitted.shape:
        raise ValueError(f"y has shape {y.shape}, fit covers {sfit.fitted.shape}")
    return y - sfit.fitted


def hat_trace(N, lam: float, P, mask=None) -> float:
    """Exact trace of the smoother matrix ``N H^{-1} N' / n``."""
    n = N.shape[0]
    H, _, _, n_used, gram = _normal_equations(N, np.zeros(n), mask, lam, P)
    return float(np.trace(_solve_refined(_factorize(H), gram, n_used, lam, P, gram / n_used)))


def gcv(N, y, lam: float, P) -> float:
    """Generalized cross-validation score ``n * RSS / (n - tr S)^2`` of the unmasked fit."""
    y = np.asarray(y, dtype=float)
    n = y.size
    if lam == 0.0:
        dense = N.toarray() if sparse.issparse(N) else np.asarray(N)
        if np.linalg.matrix_rank(dense) >= n:
            raise DegenerateSmootherError(f"unpenalized design of rank {n} interpolates the data")
    sfit = fit(N, y, lam, P)
    tr = hat_trace(N, lam, P)
    if tr >= n * (1.0 - 1e-6):  # interpolating smoother, up to jitter
        raise DegenerateSmootherError(f"hat-matrix trace {tr:.3f} >= n = {n}")
    rss = float(np.sum((y - sfit.fitted) ** 2))
    return n * rss / (n - tr) ** 2

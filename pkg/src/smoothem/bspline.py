"""B-spline bases, derivative operators and roughness penalties.

All knot positions are kept in unit coordinates. A :class:`KnotVector` also
carries the physical domain ``(lo, hi)``; abscissae are mapped affinely onto
``[0, 1]`` before evaluation, so penalties are always integrals over the unit
interval.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse


class InvalidDomainError(ValueError):
    """Raised for a non-finite or degenerate domain."""


class OutOfDomainError(ValueError):
    """Raised when an abscissa lies outside the knot domain."""


class InvalidOrderError(ValueError):
    """Raised for an unusable spline or penalty order."""


# relative slack when deciding whether a point sits on a domain endpoint
_DOMAIN_EPS = 1e-12


@dataclass(frozen=True)
class KnotVector:
    """Clamped knot sequence for B-splines of order ``order`` (degree ``order - 1``).

    Parameters
    ----------
    order : int
        Spline order ``m >= 1``.
    interior : numpy.ndarray
        Strictly increasing interior knots inside the open unit interval.
    domain : tuple of float
        Physical interval mapped onto ``[0, 1]``.
    """

    order: int
    interior: np.ndarray
    domain: tuple[float, float] = (0.0, 1.0)
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.order < 1:
            raise InvalidOrderError(f"spline order must be >= 1, got {self.order}")
        lo, hi = (float(v) for v in self.domain)
        if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
            raise InvalidDomainError(f"invalid domain {self.domain!r}")
        interior = np.asarray(self.interior, dtype=float).ravel()
        if interior.size:
            if np.any(interior <= 0.0) or np.any(interior >= 1.0):
                raise ValueError("interior knots must lie strictly inside (0, 1)")
            if np.any(np.diff(interior) <= 0.0):
                raise ValueError("interior knots must be strictly increasing")
        interior.setflags(write=False)
        knots = np.concatenate([np.zeros(self.order), interior, np.ones(self.order)])
        knots.setflags(write=False)
        object.__setattr__(self, "domain", (lo, hi))
        object.__setattr__(self, "interior", interior)
        object.__setattr__(self, "knots", knots)

    @property
    def n_interior(self) -> int:
        return self.interior.size

    @property
    def dim(self) -> int:
        """Number of basis functions ``K = K0 + m``."""
        return self.interior.size + self.order

    @property
    def breakpoints(self) -> np.ndarray:
        """Distinct knot values in unit coordinates, endpoints included."""
        return np.concatenate([[0.0], self.interior, [1.0]])

    def reduced(self, q: int = 1) -> KnotVector:
        """Same breakpoints, order lowered by ``q``."""
        if not 0 <= q < self.order:
            raise InvalidOrderError(f"cannot lower order {self.order} by {q}")
        return KnotVector(self.order - q, self.interior, self.domain)

    def to_unit(self, x) -> np.ndarray:
        """Map physical abscissae to unit coordinates, rejecting points outside."""
        x = np.asarray(x, dtype=float)
        lo, hi = self.domain
        u = (x - lo) / (hi - lo)
        if not np.all(np.isfinite(u)):
            raise OutOfDomainError("abscissae must be finite")
        if np.any(u < -_DOMAIN_EPS) or np.any(u > 1.0 + _DOMAIN_EPS):
            bad = x[(u < -_DOMAIN_EPS) | (u > 1.0 + _DOMAIN_EPS)]
            raise OutOfDomainError(f"{bad.size} point(s) outside domain {self.domain}, e.g. {bad.flat[0]!r}")
        return np.clip(u, 0.0, 1.0)

    def from_unit(self, u) -> np.ndarray:
        lo, hi = self.domain
        return lo + np.asarray(u, dtype=float) * (hi - lo)


@dataclass(frozen=True)
class PenaltyMatrix:
    """Quadratic form ``a @ matrix @ a`` equal to the integrated squared ``q``-th derivative.

    When the factors ``matrix = difference.T @ gram @ difference`` are kept,
    :meth:`quad` evaluates through them so that polynomials of degree below
    ``q`` give zero up to rounding of the differences rather than of the
    (large) assembled entries.
    """

    q: int
    matrix: np.ndarray
    difference: np.ndarray | None = field(default=None, repr=False, compare=False)
    gram: np.ndarray | None = field(default=None, repr=False, compare=False)

    def quad(self, a) -> float:
        a = np.asarray(a, dtype=float)
        if self.difference is not None and self.gram is not None:
            d = self.difference @ a
            return float(d @ self.gram @ d)
        return float(a @ self.matrix @ a)


def make_knots(domain=(0.0, 1.0), n_interior: int = 0, order: int = 4) -> KnotVector:
    """Clamped knot vector with ``n_interior`` equispaced interior knots.

    Examples
    --------
    >>> kv = make_knots((0, 1), 3, 4)
    >>> kv.interior.tolist(), kv.dim
    ([0.25, 0.5, 0.75], 7)
    """
    if n_interior < 0:
        raise ValueError("n_interior must be >= 0")
    if order < 1:
        raise InvalidOrderError("order must be >= 1")
    try:
        lo, hi = (float(v) for v in domain)
    except (TypeError, ValueError) as exc:
        raise InvalidDomainError(f"invalid domain {domain!r}") from exc
    interior = np.arange(1, n_interior + 1) / (n_interior + 1)
    return KnotVector(order, interior, (lo, hi))


def _find_spans(kv: KnotVector, u: np.ndarray) -> np.ndarray:
    """Index ``j`` of the full knot array with ``knots[j] <= u < knots[j+1]``; last span closed."""
    m = kv.order
    spans = np.searchsorted(kv.knots, u, side="right") - 1
    return np.clip(spans, m - 1, kv.dim - 1)


def _local_basis(kv: KnotVector, u: np.ndarray, spans: np.ndarray) -> np.ndarray:
    """Nonzero basis values per point, shape ``(len(u), m)``; column ``j`` is basis ``span - m + 1 + j``."""
    m = kv.order
    t = kv.knots
    npts = u.size
    vals = np.zeros((npts, m))
    vals[:, 0] = 1.0
    left = np.empty((npts, m))
    right = np.empty((npts, m))
    # Cox-de Boor triangle, raising the order one step at a time
    for j in range(1, m):
        left[:, j] = u - t[spans + 1 - j]
        right[:, j] = t[spans + j] - u
        saved = np.zeros(npts)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            temp = vals[:, r] / denom
            vals[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        vals[:, j] = saved
    return vals


def eval_basis(kv: KnotVector, x: float) -> np.ndarray:
    """All ``K`` basis functions at a single abscissa."""
    return design_matrix(kv, np.atleast_1d(np.asarray(x, dtype=float)))[0]


def design_matrix(kv: KnotVector, xs, *, as_sparse: bool = False):
    """Basis evaluated at every point: row ``i`` is ``N(xs[i])``.

    Parameters
    ----------
    kv : KnotVector
    xs : array-like, shape (n,)
        Abscissae in the physical domain of ``kv``.
    as_sparse : bool, optional
        Return a CSR matrix instead of a dense array. Each row has at most
        ``kv.order`` nonzeros.

    Returns
    -------
    numpy.ndarray or scipy.sparse.csr_array, shape (n, K)
    """
    u = kv.to_unit(np.asarray(xs, dtype=float).ravel())
    spans = _find_spans(kv, u)
    vals = _local_basis(kv, u, spans)
    m = kv.order
    cols = spans[:, None] - (m - 1) + np.arange(m)[None, :]
    rows = np.repeat(np.arange(u.size), m)
    mat = sparse.csr_array((vals.ravel(), (rows, cols.ravel())), shape=(u.size, kv.dim))
    if as_sparse:
        return mat
    return mat.toarray()


def _first_difference(kv: KnotVector) -> np.ndarray:
    """Weighted first difference ``W @ D`` mapping order-m coefficients to the order-(m-1) derivative."""
    m, t, K = kv.order, kv.knots, kv.dim
    idx = np.arange(1, K)
    weights = (m - 1) / (t[idx + m - 1] - t[idx])
    D = np.zeros((K - 1, K))
    D[np.arange(K - 1), np.arange(K - 1)] = -1.0
    D[np.arange(K - 1), np.arange(1, K)] = 1.0
    return weights[:, None] * D


def difference_operator(kv: KnotVector, q: int) -> np.ndarray:
    """Weighted ``q``-th order difference operator, shape ``(K - q, K)``.

    Applied to spline coefficients it returns the coefficients of the
    ``q``-th derivative (with respect to the unit coordinate) in the basis of
    order ``m - q`` on the same breakpoints.
    """
    if not 1 <= q < kv.order:
        raise InvalidOrderError(f"need 1 <= q < m, got q={q}, m={kv.order}")
    op = _first_difference(kv)
    cur = kv
    for _ in range(q - 1):
        cur = cur.reduced(1)
        op = _first_difference(cur) @ op
    return op


def gram_matrix(kv: KnotVector) -> np.ndarray:
    """Exact ``integral_0^1 N(u) N(u)^T du`` over the unit interval.

    Uses Gauss-Legendre quadrature on every knot span, with enough nodes to
    integrate products of two degree ``m - 1`` polynomials exactly.
    """
    m = kv.order
    n_nodes = -(-(2 * m - 1) // 2) + 1
    nodes, wts = np.polynomial.legendre.leggauss(n_nodes)
    bp = kv.breakpoints
    a, b = bp[:-1], bp[1:]
    half = 0.5 * (b - a)
    u = (0.5 * (a + b))[:, None] + half[:, None] * nodes[None, :]
    w = half[:, None] * wts[None, :]
    # evaluate directly in unit coordinates
    u = u.ravel()
    spans = _find_spans(kv, u)
    vals = _local_basis(kv, u, spans)
    cols = spans[:, None] - (m - 1) + np.arange(m)[None, :]
    G = np.zeros((kv.dim, kv.dim))
    wv = vals * w.ravel()[:, None]
    for r in range(m):
        for s in range(m):
            np.add.at(G, (cols[:, r], cols[:, s]), wv[:, r] * vals[:, s])
    return 0.5 * (G + G.T)


def penalty_matrix(kv: KnotVector, q: int = 2) -> PenaltyMatrix:
    """Roughness penalty ``P_q = Dq^T G Dq`` with ``a @ P_q @ a = int (f^(q))^2``."""
    Dq = difference_operator(kv, q)
    G = gram_matrix(kv.reduced(q))
    P = Dq.T @ G @ Dq
    return PenaltyMatrix(q, 0.5 * (P + P.T), Dq, G)


def spline_values(kv: KnotVector, coef, xs) -> np.ndarray:
    """Evaluate ``sum_k coef[k] N_k(x)`` at ``xs``."""
    return design_matrix(kv, xs, as_sparse=True) @ np.asarray(coef, dtype=float)

"""Population-level convergence constants for gradient EM on the
equal-variance spike mixture, and a sampling check of the Hessian bounds
they are derived from.

Parameters are ordered ``theta = (alpha, mu, sigma2)``. ``known_alpha``
treats ``alpha`` as fixed, leaving the ``(mu, sigma2)`` block.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class ConstantSet(str, enum.Enum):
    FULL_UNKNOWN = "full"
    KNOWN_ALPHA = "known_alpha"


class InvalidRadiusError(ValueError):
    pass


class NoContractionError(ValueError):
    """The bound does not contract (rate >= 1)."""


# default (sigma*, r) pairs and 1 - alpha* values of the rate table, with reference
# contraction rates and iteration counts for that grid
RATE_GRID_SIGMA_R = ((1.1, 0.37), (2.1, 0.7), (3.1, 1.03), (4.1, 1.37), (5.1, 1.7))
RATE_GRID_SPIKE_FRACTIONS = (0.1, 0.05)
REFERENCE_RATES = {
    0.1: (0.984, 0.795, 0.807, 0.852, 0.894),
    0.05: (0.991, 0.795, 0.667, 0.702, 0.752),
}
REFERENCE_ITERATIONS = {
    0.1: (40, 17, 17, 23, 32),
    0.05: (70, 17, 10, 15, 18),
}


@dataclass(frozen=True)
class TheoryInputs:
    """Population parameters and ball radius.

    ``sigma_star2`` is the noise *variance*; the table is indexed by the
    standard deviation, see :meth:`from_sd`.
    """

    alpha_star: float
    sigma_star2: float
    r: float
    mu_star: float = 12.0
    omega: float = 1e-3
    omega0: float = 1e-3
    constant_set: ConstantSet = ConstantSet.KNOWN_ALPHA

    def __post_init__(self):
        object.__setattr__(self, "constant_set", ConstantSet(self.constant_set))
        if not 0.0 < self.alpha_star < 1.0:
            raise ValueError("alpha_star must lie in (0, 1)")
        if self.sigma_star2 <= 0.0:
            raise ValueError("sigma_star2 must be positive")
        if self.r <= 0.0:
            raise InvalidRadiusError("radius must be positive")
        if self.r >= self.sigma_star2:
            raise InvalidRadiusError(f"radius {self.r} must be below sigma*^2 = {self.sigma_star2}")

    @classmethod
    def from_sd(cls, sigma_star: float, r: float, spike_fraction: float, **kw) -> TheoryInputs:
        return cls(alpha_star=1.0 - spike_fraction, sigma_star2=sigma_star**2, r=r, **kw)

    @property
    def theta_star(self) -> np.ndarray:
        return np.array([self.alpha_star, self.mu_star, self.sigma_star2])


def _variance_terms_nu(inp: TheoryInputs) -> tuple[float, float]:
    s2, r, p = inp.sigma_star2, inp.r, 1.0 - inp.alpha_star
    cross = p * r / (s2 - r) ** 2
    return (s2 - r) / (2.0 * (s2 + r) ** 3) - cross, p / (s2 + r) - cross


def nu_alpha_term(inp: TheoryInputs, form: str = "printed") -> float:
    """First strong-convexity term, written two ways.

    ``"printed"`` is ``max(1/(alpha*+r)^2, 1)``, ``"proof"`` is
    ``1/min(alpha*+r, 1)^2``; the two coincide for every input.
    """
    a = inp.alpha_star + inp.r
    if form == "printed":
        return max(1.0 / a**2, 1.0)
    if form == "proof":
        return 1.0 / min(a, 1.0) ** 2
    raise ValueError(f"unknown form {form!r}")


def nu(inp: TheoryInputs) -> float:
    """Strong-concavity constant. May be nonpositive; see :func:`nu_is_positive`."""
    terms = list(_variance_terms_nu(inp))
    if inp.constant_set is ConstantSet.FULL_UNKNOWN:
        terms.append(nu_alpha_term(inp))
    return min(terms)


def nu_is_positive(inp: TheoryInputs) -> bool:
    return nu(inp) > 0.0


def lipschitz_L(inp: TheoryInputs) -> float:
    """Lipschitz-smoothness constant."""
    s2, r, p, a = inp.sigma_star2, inp.r, 1.0 - inp.alpha_star, inp.alpha_star
    terms = [
        p * s2 / (s2 - r) ** 2,
        (s2 + r) / (2.0 * (s2 - r) ** 3) + p / (s2 - r),
    ]
    if inp.constant_set is ConstantSet.FULL_UNKNOWN:
        terms.append(a / max(a - r, 0.7) ** 2 + p / max(p - r, inp.omega) ** 2)
    return max(terms)


def gamma_bound(inp: TheoryInputs, idealized: bool = False) -> float:
    """Order-of-magnitude gradient-smoothness constant, leading constant 1.

    ``mu*^5 / sigma*^8 * exp(-(mu* - r) / (sigma*^2 + r) * omega0)``.
    With ``idealized=True`` returns 0.
    """
    if idealized:
        return 0.0
    mu, s2, r = inp.mu_star, inp.sigma_star2, inp.r
    if mu <= r:
        raise ValueError("mu_star must exceed the radius")
    return mu**5 / s2**4 * math.exp(-(mu - r) / (s2 + r) * inp.omega0)


def convergence_rate(nu_: float, L: float, gamma: float = 0.0) -> float:
    """Contraction factor ``1 - (2 nu - gamma) / (L + nu)``."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    if gamma >= nu_:
        raise NoContractionError(f"gamma={gamma} >= nu={nu_}")
    if nu_ > L:
        raise ValueError(f"need nu <= L, got nu={nu_}, L={L}")
    return 1.0 - (2.0 * nu_ - gamma) / (L + nu_)


def iterations_to(rate: float, target: float = 1e-4) -> int:
    """Smallest ``k`` with ``rate**k < target``.

    >>> iterations_to(0.5, 0.25)
    3
    """
    if not 0.0 < target < 1.0:
        raise ValueError("target must lie in (0, 1)")
    if rate >= 1.0:
        raise NoContractionError(f"rate {rate} >= 1")
    if rate <= 0.0:
        return 1
    k = max(1, math.ceil(math.log(target) / math.log(rate)))
    while rate**k >= target:
        k += 1
    while k > 1 and rate ** (k - 1) < target:
        k -= 1
    return k


def q_hessian(theta, theta_star, exact: bool = False) -> np.ndarray:
    """Hessian of ``-Q(theta | theta*)`` for the equal-variance mixture.

    The default is the closed form used in the convergence analysis. Its
    ``(sigma2, sigma2)`` entry omits ``(1 - alpha*) (mu* - mu)^2 / sigma^6``,
    which is zero at ``mu = mu*``; ``exact=True`` includes it.
    """
    a, mu, s2 = (float(v) for v in theta)
    a_s, mu_s, s2_s = (float(v) for v in theta_star)
    if not 0.0 < a < 1.0 or s2 <= 0.0:
        raise ValueError(f"theta {theta!r} outside the parameter space")
    p = 1.0 - a_s
    off = p * (mu_s - mu) / s2**2
    h33 = -0.5 / s2**2 + s2_s / s2**3
    if exact:
        h33 += p * (mu_s - mu) ** 2 / s2**3
    return np.array([
        [a_s / a**2 + p / (1.0 - a) ** 2, 0.0, 0.0],
        [0.0, p / s2, off],
        [0.0, off, h33],
    ])


def neg_q_monte_carlo(theta, theta_star, n_samples: int = 1_000_000, seed: int = 0,
                      sample=None) -> float:
    """Monte-Carlo estimate of ``-Q(theta | theta*)``; pass ``sample`` to reuse draws."""
    a_s, mu_s, s2_s = (float(v) for v in theta_star)
    if sample is None:
        rng = np.random.default_rng(seed)
        z = rng.random(n_samples) >= a_s
        sample = rng.normal(np.where(z, mu_s, 0.0), math.sqrt(s2_s))
    xi = sample

    def logs(a, mu, s2):
        la = math.log(a) - 0.5 * (math.log(2 * math.pi * s2) + xi**2 / s2)
        lb = math.log1p(-a) - 0.5 * (math.log(2 * math.pi * s2) + (xi - mu) ** 2 / s2)
        return la, lb

    la_s, lb_s = logs(a_s, mu_s, s2_s)
    w_b = 1.0 / (1.0 + np.exp(np.clip(la_s - lb_s, -745, 709)))
    la, lb = logs(*(float(v) for v in theta))
    return -float(np.mean((1.0 - w_b) * la + w_b * lb))


@dataclass
class BoundsReport:
    nu: float
    L: float
    n_samples: int
    n_skipped: int
    min_eig: float
    max_eig: float
    nu_violations: int
    L_violations: int

    @property
    def ok(self) -> bool:
        return self.nu_violations == 0 and self.L_violations == 0


def _sample_ball(rng, center, radius, n):
    d = center.size
    direc = rng.normal(size=(n, d))
    direc /= np.linalg.norm(direc, axis=1, keepdims=True)
    rad = radius * rng.random(n) ** (1.0 / d)
    return center + direc * rad[:, None]


def verify_bounds(inp: TheoryInputs, n_samples: int = 10_000, seed: int = 0,
                  nu_value: float | None = None, L_value: float | None = None,
                  exact: bool = False, tol: float = 1e-9) -> BoundsReport:
    """Sample ``theta`` uniformly in the ball of radius ``r`` about ``theta*`` and
    count Hessian eigenvalues outside ``[nu, L]``.

    For the known-alpha set only the ``(mu, sigma2)`` block is sampled and
    checked. Samples leaving the parameter space are skipped and counted.
    Violations are reported, never raised.
    """
    nu_v = nu(inp) if nu_value is None else nu_value
    L_v = lipschitz_L(inp) if L_value is None else L_value
    rng = np.random.default_rng(seed)
    star = inp.theta_star
    if inp.constant_set is ConstantSet.KNOWN_ALPHA:
        pts = _sample_ball(rng, star[1:], inp.r, n_samples)
        thetas = np.column_stack([np.full(n_samples, inp.alpha_star), pts])
        block = slice(1, 3)
    else:
        thetas = _sample_ball(rng, star, inp.r, n_samples)
        block = slice(0, 3)
    valid = (thetas[:, 0] > 0) & (thetas[:, 0] < 1) & (thetas[:, 2] > 0)
    eigs = np.array([
        np.linalg.eigvalsh(q_hessian(t, star, exact=exact)[block, block]) for t in thetas[valid]
    ])
    if eigs.size == 0:
        return BoundsReport(nu_v, L_v, n_samples, n_samples, np.nan, np.nan, 0, 0)
    lo, hi = eigs[:, 0], eigs[:, -1]
    return BoundsReport(
        nu=nu_v, L=L_v, n_samples=n_samples, n_skipped=int((~valid).sum()),
        min_eig=float(lo.min()), max_eig=float(hi.max()),
        nu_violations=int(np.sum(lo < nu_v - tol)), L_violations=int(np.sum(hi > L_v + tol)),
    )


@dataclass
class RateRow:
    sigma_star: float
    r: float
    spike_fraction: float
    nu: float = float("nan")
    L: float = float("nan")
    gamma: float = float("nan")
    rate: float = float("nan")
    iterations: int | None = None
    flag: str = ""


def rate_row(sigma_star: float, r: float, spike_fraction: float, *, target: float = 1e-4,
             constant_set=ConstantSet.KNOWN_ALPHA, idealized_gamma: bool = True,
             mu_star: float = 12.0, omega: float = 1e-3, omega0: float = 1e-3) -> RateRow:
    """One row of the convergence table; invalid inputs are flagged, not raised."""
    row = RateRow(sigma_star, r, spike_fraction)
    try:
        inp = TheoryInputs.from_sd(sigma_star, r, spike_fraction, mu_star=mu_star, omega=omega,
                                   omega0=omega0, constant_set=constant_set)
    except InvalidRadiusError as exc:
        row.flag = f"invalid_radius: {exc}"
        return row
    except ValueError as exc:
        row.flag = f"invalid_input: {exc}"
        return row
    row.nu, row.L = nu(inp), lipschitz_L(inp)
    try:
        row.gamma = gamma_bound(inp, idealized=idealized_gamma)
        row.rate = convergence_rate(row.nu, row.L, row.gamma)
        row.iterations = iterations_to(row.rate, target)
    except (NoContractionError, ValueError) as exc:
        row.flag = f"no_contraction: {exc}"
    return row


def rate_table(grid=None, spike_fractions=RATE_GRID_SPIKE_FRACTIONS, **kw) -> list[RateRow]:
    """Rows over ``(sigma*, r)`` pairs times spike fractions, defaulting to the reference grid."""
    grid = RATE_GRID_SIGMA_R if grid is None else grid
    return [rate_row(s, r, p, **kw) for p in spike_fractions for s, r in grid]

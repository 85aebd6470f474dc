"""Two-component Gaussian mixture for residuals: a null component ``N(0, s2)``
and a spike component ``N(mu, s2)`` or, with inflated variance, ``N(mu, s2 + h2)``.

``alpha`` is the weight of the null (non-spike) component throughout.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

_LOG_2PI = np.log(2.0 * np.pi)
_COLLAPSE_FRAC = 1e-8

DEFAULT_THRESHOLDS = (0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95, 0.99)


class Variant(str, enum.Enum):
    EQUAL = "equal"
    INFLATED = "inflated"


class InvalidDataError(ValueError):
    pass


class ComponentCollapseError(ValueError):
    """One mixture component has (numerically) no weight left."""


@dataclass(frozen=True)
class MixtureParams:
    alpha: float
    mu: float
    sigma2: float
    sigma_h2: float | None = None
    variant: Variant = Variant.EQUAL

    def __post_init__(self):
        variant = Variant(self.variant)
        object.__setattr__(self, "variant", variant)
        for name in ("alpha", "mu", "sigma2"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.sigma2 > 0.0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if variant is Variant.EQUAL and self.sigma_h2 is not None:
            raise ValueError("equal-variance model has no sigma_h2")
        if variant is Variant.INFLATED:
            h2 = 0.0 if self.sigma_h2 is None else float(self.sigma_h2)
            if h2 < 0.0:
                raise ValueError("sigma_h2 must be nonnegative")
            object.__setattr__(self, "sigma_h2", h2)

    @property
    def spike_var(self) -> float:
        return self.sigma2 + (self.sigma_h2 or 0.0)

    def as_array(self) -> np.ndarray:
        vals = [self.alpha, self.mu, self.sigma2]
        if self.variant is Variant.INFLATED:
            vals.append(self.sigma_h2)
        return np.array(vals, dtype=float)


@dataclass
class EMResult:
    params: MixtureParams
    responsibilities: np.ndarray
    loglik_trace: np.ndarray
    iterations: int
    converged: bool
    collapsed: bool = False


@dataclass
class ThresholdChoice:
    threshold: float
    labels: np.ndarray
    loglik: float
    no_spikes: bool = False


def _check_xi(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float).ravel()
    if xi.size == 0 or not np.all(np.isfinite(xi)):
        raise InvalidDataError("residuals must be a nonempty finite vector")
    return xi


def _log_normal(x, mean, var):
    return -0.5 * (_LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def _log_components(xi, params: MixtureParams):
    la = np.log(params.alpha) + _log_normal(xi, 0.0, params.sigma2)
    lb = np.log1p(-params.alpha) + _log_normal(xi, params.mu, params.spike_var)
    return la, lb


def loglik(xi, params: MixtureParams) -> float:
    """Mean observed-data log-likelihood."""
    xi = _check_xi(xi)
    la, lb = _log_components(xi, params)
    return float(np.mean(np.logaddexp(la, lb)))


def responsibilities(xi, params: MixtureParams) -> np.ndarray:
    """Posterior probability that each residual belongs to the spike component."""
    xi = _check_xi(xi)
    la, lb = _log_components(xi, params)
    # logistic of the log-odds; stable in both tails
    return 1.0 / (1.0 + np.exp(np.clip(la - lb, -745.0, 709.0)))


def m_step(xi, gamma, variant: Variant | str = Variant.EQUAL) -> MixtureParams:
    """Maximize the expected complete-data log-likelihood given responsibilities.

    Raises
    ------
    ComponentCollapseError
        If either component's total weight falls below ``1e-8 * n``.
    """
    variant = Variant(variant)
    xi = _check_xi(xi)
    gamma = np.clip(np.asarray(gamma, dtype=float), 0.0, 1.0)
    n = xi.size
    w1 = gamma.sum()
    w0 = n - w1
    if w1 < _COLLAPSE_FRAC * n or w0 < _COLLAPSE_FRAC * n:
        raise ComponentCollapseError(f"component weights ({w0:.3g}, {w1:.3g}) collapsed")
    alpha = w0 / n
    mu = float(gamma @ xi / w1)
    ss0 = float((1.0 - gamma) @ xi**2)
    ss1 = float(gamma @ (xi - mu) ** 2)
    pooled = (ss0 + ss1) / n
    if pooled <= 0.0:
        raise ComponentCollapseError("zero residual variance")
    if variant is Variant.EQUAL:
        return MixtureParams(alpha, mu, pooled, None, variant)
    s0, s1 = ss0 / w0, ss1 / w1
    if s1 > s0 > 0.0:
        return MixtureParams(alpha, mu, s0, s1 - s0, variant)
    return MixtureParams(alpha, mu, pooled, 0.0, variant)


def _fit_params(xi, init: MixtureParams, variant: Variant, tol: float, max_iter: int) -> EMResult:
    params = init
    trace = [loglik(xi, params)]
    gamma = responsibilities(xi, params)
    converged = collapsed = False
    it = 0
    for it in range(1, max_iter + 1):
        try:
            new = m_step(xi, gamma, variant)
        except ComponentCollapseError:
            collapsed = True
            it -= 1
            break
        params = new
        gamma = responsibilities(xi, params)
        trace.append(loglik(xi, params))
        if abs(trace[-1] - trace[-2]) < tol:
            converged = True
            break
    return EMResult(params, gamma, np.array(trace), it, converged, collapsed)


def run_em(xi, init: MixtureParams, variant: Variant | str | None = None,
           tol: float = 1e-8, max_iter: int = 500) -> EMResult:
    """Closed-form EM from ``init`` until the log-likelihood change drops below ``tol``.

    On component collapse the last valid parameters are returned with
    ``collapsed=True`` instead of raising.
    """
    xi = _check_xi(xi)
    variant = Variant(variant if variant is not None else init.variant)
    if init.variant is not variant:
        h2 = 0.0 if variant is Variant.INFLATED else None
        init = replace(init, sigma_h2=h2, variant=variant)
    return _fit_params(xi, init, variant, tol, max_iter)


def q_function(xi, theta: MixtureParams, theta_prev: MixtureParams) -> float:
    """Mean expected complete-data log-likelihood ``Q_n(theta | theta_prev)``."""
    xi = _check_xi(xi)
    gamma = responsibilities(xi, theta_prev)
    la, lb = _log_components(xi, theta)
    return float(np.mean((1.0 - gamma) * la + gamma * lb))


def q_gradient(xi, theta: MixtureParams, theta_prev: MixtureParams) -> np.ndarray:
    """Gradient of ``Q_n(. | theta_prev)`` at ``theta`` in ``(alpha, mu, sigma2)``.

    Equal-variance model only.
    """
    if theta.variant is not Variant.EQUAL:
        raise ValueError("gradient updates are defined for the equal-variance model")
    xi = _check_xi(xi)
    g = responsibilities(xi, theta_prev)
    a, mu, s2 = theta.alpha, theta.mu, theta.sigma2
    d_alpha = np.mean((1.0 - g) / a - g / (1.0 - a))
    d_mu = np.mean(g * (xi - mu)) / s2
    resid2 = (1.0 - g) * xi**2 + g * (xi - mu) ** 2
    d_s2 = np.mean(-0.5 / s2 + resid2 / (2.0 * s2**2))
    return np.array([d_alpha, d_mu, d_s2])


def gradient_em_step(xi, params: MixtureParams, stepsize: float) -> tuple[MixtureParams, bool]:
    """One first-order EM update ``theta + s * grad Q_n(theta | theta)``.

    Returns the new parameters and whether they had to be projected back
    into the valid region (``alpha`` in (0, 1), ``sigma2 > 0``).
    """
    if stepsize <= 0:
        raise ValueError("stepsize must be positive")
    step = params.as_array() + stepsize * q_gradient(xi, params, params)
    alpha, mu, s2 = step
    projected = False
    if not 0.0 < alpha < 1.0:
        alpha = float(np.clip(alpha, 1e-6, 1.0 - 1e-6))
        projected = True
    if s2 <= 0.0:
        s2 = 1e-6
        projected = True
    return MixtureParams(float(alpha), float(mu), float(s2)), projected


def run_gradient_em(xi, init: MixtureParams, stepsize: float, tol: float = 1e-12,
                    max_iter: int = 100_000) -> tuple[MixtureParams, int]:
    """Iterate :func:`gradient_em_step` until the parameter change is below ``tol``."""
    params = init
    for it in range(1, max_iter + 1):
        new, _ = gradient_em_step(xi, params, stepsize)
        delta = np.max(np.abs(new.as_array() - params.as_array()))
        params = new
        if delta < tol:
            return params, it
    return params, max_iter


def classify(gamma, threshold: float = 0.5) -> np.ndarray:
    """Spike labels: ``gamma >= threshold``."""
    if not 0.5 <= threshold < 1.0:
        raise ValueError("threshold must lie in [0.5, 1)")
    return np.asarray(gamma, dtype=float) >= threshold


def init_from_labels(xi, labels, variant: Variant | str = Variant.EQUAL) -> MixtureParams:
    """Complete-data MLE treating ``labels`` as known memberships.

    If either group is empty, returns the no-spike starting point
    ``alpha = 1 - 1/n``, ``mu = max|xi|``, ``sigma2 = var(xi)``.
    """
    variant = Variant(variant)
    xi = _check_xi(xi)
    labels = np.asarray(labels, dtype=bool)
    n = xi.size
    if labels.all() or not labels.any():
        h2 = 0.0 if variant is Variant.INFLATED else None
        var = float(np.var(xi))
        return MixtureParams(1.0 - 1.0 / n, float(np.max(np.abs(xi))), var if var > 0 else 1e-12, h2, variant)
    return m_step(xi, labels.astype(float), variant)


def complete_loglik(xi, labels, params: MixtureParams) -> float:
    """Mean complete-data log-likelihood with memberships fixed to ``labels``."""
    xi = _check_xi(xi)
    labels = np.asarray(labels, dtype=bool)
    la, lb = _log_components(xi, params)
    return float(np.mean(np.where(labels, lb, la)))


def select_threshold(xi, gamma, variant: Variant | str = Variant.EQUAL,
                     candidates=DEFAULT_THRESHOLDS, likelihood: str = "complete") -> ThresholdChoice:
    """Pick the posterior threshold whose hard labels fit best.

    For each candidate the labels ``gamma >= t`` define a complete-data MLE;
    the candidate with the largest log-likelihood at that MLE wins, ties going
    to the smaller threshold. ``likelihood="observed"`` scores the mixture
    likelihood at the same MLE instead of the complete-data one.
    """
    if likelihood not in ("complete", "observed"):
        raise ValueError("likelihood must be 'complete' or 'observed'")
    variant = Variant(variant)
    xi = _check_xi(xi)
    cands = sorted(float(c) for c in candidates)
    if not cands:
        raise ValueError("need at least one candidate threshold")
    best = None
    for t in cands:
        labels = classify(gamma, t)
        if labels.all() or not labels.any():
            continue
        try:
            params = m_step(xi, labels.astype(float), variant)
        except ComponentCollapseError:
            continue
        if likelihood == "complete":
            score = complete_loglik(xi, labels, params)
        else:
            score = loglik(xi, params)
        if best is None or score > best.loglik:
            best = ThresholdChoice(t, labels, score)
    if best is None:
        return ThresholdChoice(cands[-1], np.zeros(xi.size, dtype=bool), float("-inf"), no_spikes=True)
    return best

"""Simulated spiky curves and evaluation metrics.

Data follow ``y_i = f(x_i) + mu* 1(x_i spiked) + eps_i`` on an equispaced
grid over ``[0, 1]`` with ``eps_i ~ N(0, sigma*^2)`` and spike size
``mu* = 6 * stn * sigma*``. Spikes are placed independently per point
("uniform") or as clumps from a non-homogeneous Poisson process.
"""

from __future__ import annotations

import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from .pipeline import PipelineConfig, PipelineResult, run_smoothem

EVAL_GRID_SIZE = 1000
METRIC_NAMES = ("l2", "linf", "fnr", "fpr", "sse")


@dataclass(frozen=True)
class Curve:
    """Named truth curve.

    ``poly4`` evaluates a quartic with coefficients ``params`` (constant term
    first). ``beta41`` is the Beta(4, 1) density ``4 x^3``. ``sine_fast`` is
    ``amp * sin(freq * x)`` with ``params = (amp, freq)``; ``nine_pi_sin`` is
    ``9 pi sin(x)`` taken literally.
    """

    name: str = "poly4"
    params: tuple[float, ...] = ()

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.name == "poly4":
            coefs = self.params or POLY4_DEFAULT
            return np.polynomial.polynomial.polyval(x, coefs)
        if self.name == "beta41":
            return 4.0 * x**3
        if self.name == "sine_fast":
            amp, freq = self.params or (3.0, 9.0 * math.pi)
            return amp * np.sin(freq * x)
        if self.name == "nine_pi_sin":
            return 9.0 * math.pi * np.sin(x)
        raise ValueError(f"unknown curve {self.name!r}")


# 6x - 24x^2 + 34x^3 - 15x^4: rises, dips and rises again over [0, 1] with range [0, 1]
POLY4_DEFAULT = (0.0, 6.0, -24.0, 34.0, -15.0)


@dataclass(frozen=True)
class RateSpec:
    """Gaussian-bump intensity ``sum_j h_j exp(-(x - c_j)^2 / (2 w_j^2))`` up to scale."""

    centers: tuple[float, ...] = (0.18, 0.5, 0.8)
    widths: tuple[float, ...] = (0.06, 0.09, 0.04)
    heights: tuple[float, ...] = (1.0, 0.6, 0.8)

    def __post_init__(self):
        if not (len(self.centers) == len(self.widths) == len(self.heights) >= 1):
            raise ValueError("rate spec needs matching, nonempty centers/widths/heights")
        if any(w <= 0 for w in self.widths) or any(h < 0 for h in self.heights) or sum(self.heights) <= 0:
            raise ValueError("rate spec widths must be positive and heights nonnegative")

    def shape(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)[..., None]
        c, w, h = (np.asarray(v, dtype=float) for v in (self.centers, self.widths, self.heights))
        return np.sum(h * np.exp(-0.5 * ((x - c) / w) ** 2), axis=-1)

    def integral(self, a, b) -> np.ndarray:
        """Integral of :meth:`shape` over ``[a, b]`` (vectorized)."""
        a = np.asarray(a, dtype=float)[..., None]
        b = np.asarray(b, dtype=float)[..., None]
        c, w, h = (np.asarray(v, dtype=float) for v in (self.centers, self.widths, self.heights))
        return np.sum(h * w * math.sqrt(2 * math.pi) * (ndtr((b - c) / w) - ndtr((a - c) / w)), axis=-1)


@dataclass(frozen=True)
class Scenario:
    n: int = 500
    curve: Curve = field(default_factory=Curve)
    sigma_star: float = 1.0
    stn: float = 2.0
    alpha_star: float = 0.8
    spike_process: str = "uniform"
    rate_spec: RateSpec = field(default_factory=RateSpec)
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.sigma_star <= 0 or self.stn < 0:
            raise ValueError("need sigma_star > 0 and stn >= 0")
        if not 0.0 < self.alpha_star <= 1.0:
            raise ValueError("alpha_star must lie in (0, 1]")
        if self.spike_process not in ("uniform", "nhpp"):
            raise ValueError("spike_process must be 'uniform' or 'nhpp'")

    @property
    def mu_star(self) -> float:
        return 6.0 * self.stn * self.sigma_star

    @property
    def theta_star(self) -> np.ndarray:
        return np.array([self.alpha_star, self.mu_star, self.sigma_star**2])


@dataclass
class Dataset:
    xs: np.ndarray
    ys: np.ndarray
    true_labels: np.ndarray
    true_f: np.ndarray
    theta_star: np.ndarray
    scenario: Scenario


def _cells(n: int) -> tuple[np.ndarray, np.ndarray]:
    xs = np.linspace(0.0, 1.0, n)
    half = 0.5 / (n - 1)
    return np.clip(xs - half, 0, 1), np.clip(xs + half, 0, 1)


def nhpp_scale(n: int, spike_fraction: float, spec: RateSpec) -> float:
    """Intensity scale giving ``spike_fraction * n`` expected spiked grid points.

    A grid point is spiked when at least one event lands in its cell, so the
    expected count is ``sum_i 1 - exp(-c * Lambda_i)``.
    """
    target = spike_fraction * n
    if target <= 0:
        return 0.0
    lo, hi = _cells(n)
    mass = spec.integral(lo, hi)
    reachable = np.count_nonzero(mass > 0)
    if target >= reachable:
        raise ValueError(f"cannot spike {target:.1f} of {reachable} reachable points")

    def excess(c):
        return float(np.sum(-np.expm1(-c * mass))) - target

    hi_c = target / mass.sum()
    while excess(hi_c) < 0:
        hi_c *= 2
    return brentq(excess, 0.0, hi_c, xtol=1e-12, rtol=1e-12)


def thinning(rng: np.random.Generator, scale: float, spec: RateSpec) -> np.ndarray:
    """Lewis-Shedler thinning on ``[0, 1]`` for intensity ``scale * spec.shape``."""
    envelope = scale * sum(spec.heights)
    count = rng.poisson(envelope)
    cand = rng.random(count)
    keep = rng.random(count) * envelope <= scale * spec.shape(cand)
    return np.sort(cand[keep])


def generate(scenario: Scenario) -> Dataset:
    """Draw one dataset; identical scenarios (seed included) give identical data."""
    rng = np.random.default_rng(scenario.seed)
    n = scenario.n
    xs = np.linspace(0.0, 1.0, n)
    frac = 1.0 - scenario.alpha_star
    if frac == 0.0:
        labels = np.zeros(n, dtype=bool)
    elif scenario.spike_process == "uniform":
        labels = rng.random(n) < frac
    else:
        events = thinning(rng, nhpp_scale(n, frac, scenario.rate_spec), scenario.rate_spec)
        labels = np.zeros(n, dtype=bool)
        labels[np.rint(events * (n - 1)).astype(int)] = True
    f = scenario.curve(xs)
    ys = f + scenario.mu_star * labels + scenario.sigma_star * rng.standard_normal(n)
    return Dataset(xs, ys, labels, f, scenario.theta_star, scenario)


@dataclass
class MetricsRow:
    l2: float
    linf: float
    fnr: float
    fpr: float
    sse: float
    scenario: Scenario | None = None

    def values(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_NAMES}


def curve_errors(fhat, f, grid_size: int = EVAL_GRID_SIZE) -> tuple[float, float]:
    """Root-mean-square and maximum absolute difference of two callables on ``[0, 1]``."""
    grid = np.linspace(0.0, 1.0, grid_size)
    err = np.abs(fhat(grid) - f(grid))
    return float(np.sqrt(np.mean(err**2))), float(err.max())


def label_rates(pred, truth) -> tuple[float, float]:
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    n_pos, n_neg = truth.sum(), (~truth).sum()
    fnr = float((~pred & truth).sum() / n_pos) if n_pos else 0.0
    fpr = float((pred & ~truth).sum() / n_neg) if n_neg else 0.0
    return fnr, fpr


def metrics(result: PipelineResult, dataset: Dataset, eval_grid_size: int = EVAL_GRID_SIZE) -> MetricsRow:
    """Curve errors on an equispaced grid, label error rates, and squared parameter error."""
    if result.labels.size != dataset.ys.size:
        raise ValueError("result and dataset lengths differ")
    l2, linf = curve_errors(result.predict, dataset.scenario.curve, eval_grid_size)
    fnr, fpr = label_rates(result.labels, dataset.true_labels)
    p = result.params
    est = np.array([p.alpha, p.mu, p.sigma2])
    sse = float(np.sum((est - dataset.theta_star) ** 2))
    return MetricsRow(l2, linf, fnr, fpr, sse, dataset.scenario)


def replicate_seed(base_seed: int, cell: int, replicate: int) -> int:
    return int(np.random.SeedSequence([base_seed, cell, replicate]).generate_state(1)[0])


def _run_one(args):
    scenario, config = args
    try:
        data = generate(scenario)
        return metrics(run_smoothem(data.xs, data.ys, config), data).values()
    except Exception as exc:  # a failed replicate marks its cell partial
        return {"error": f"{type(exc).__name__}: {exc}"}


def sweep(scenarios, replicates: int = 20, config: PipelineConfig | None = None,
          base_seed: int = 0, n_jobs: int = 1) -> list[dict]:
    """Average metrics over seeded replicates for every scenario cell.

    Replicate ``j`` of cell ``i`` uses seed ``replicate_seed(base_seed, i, j)``,
    so results do not depend on ``n_jobs`` or evaluation order.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    scenarios = list(scenarios)
    config = config or PipelineConfig()
    jobs = [
        (_replace_seed(sc, replicate_seed(base_seed, i, j)), config)
        for i, sc in enumerate(scenarios) for j in range(replicates)
    ]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            outs = list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * n_jobs))))
    else:
        outs = [_run_one(job) for job in jobs]

    table = []
    for i, sc in enumerate(scenarios):
        cell = outs[i * replicates:(i + 1) * replicates]
        ok = [c for c in cell if "error" not in c]
        row = {
            "n": sc.n, "stn": sc.stn, "one_minus_alpha": round(1.0 - sc.alpha_star, 12),
            "spike_process": sc.spike_process, "curve": sc.curve.name,
            "replicates": replicates, "n_ok": len(ok), "partial": len(ok) < replicates,
        }
        for name in METRIC_NAMES:
            vals = [c[name] for c in ok]
            row[f"{name}_mean"] = statistics.fmean(vals) if vals else float("nan")
            row[f"{name}_sd"] = statistics.stdev(vals) if len(vals) > 1 else 0.0 if vals else float("nan")
        row["errors"] = "; ".join(c["error"] for c in cell if "error" in c)
        table.append(row)
    return table


def _replace_seed(sc: Scenario, seed: int) -> Scenario:
    d = asdict(sc)
    d["curve"] = sc.curve
    d["rate_spec"] = sc.rate_spec
    d["seed"] = seed
    return Scenario(**d)


def scenario_grid(ns, stns, spike_fractions, **kw) -> list[Scenario]:
    return [
        Scenario(n=n, stn=s, alpha_star=1.0 - p, **kw)
        for n in ns for s in stns for p in spike_fractions
    ]

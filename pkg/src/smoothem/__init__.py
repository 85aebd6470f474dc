"""Joint estimation of a smooth curve and sparse spikes via penalized splines and mixture EM."""

from .bspline import KnotVector, PenaltyMatrix, design_matrix, eval_basis, make_knots, penalty_matrix
from .mixture import EMResult, MixtureParams, Variant, run_em
from .pipeline import PipelineConfig, PipelineResult, run_smoothem
from .simgen import Curve, RateSpec, Scenario, generate, metrics, sweep

__all__ = [
    "Curve", "EMResult", "KnotVector", "MixtureParams", "PenaltyMatrix", "PipelineConfig",
    "PipelineResult", "RateSpec", "Scenario", "Variant", "design_matrix", "eval_basis",
    "generate", "make_knots", "metrics", "penalty_matrix", "run_em", "run_smoothem", "sweep",
]

__version__ = "0.1.0"

"""Closed-loop rollouts, metrics and classical baselines."""

from .baselines import (BaselineSpec, DroopController, LqrController, make_baseline,
                        nominal_control)
from .lqr import CareError, care_residual, care_solve
from .rollout import (COMPARE_COLUMNS, PolicyController, RolloutTrace, compare, metrics,
                      rollout, write_compare_csv, write_trace_csv)

__all__ = [
    "BaselineSpec", "COMPARE_COLUMNS", "CareError", "DroopController", "LqrController",
    "PolicyController", "RolloutTrace", "care_residual", "care_solve", "compare",
    "make_baseline", "metrics", "nominal_control", "rollout", "write_compare_csv",
    "write_trace_csv",
]

"""Minimal reverse-mode kernel: tape autodiff, MLPs, Adam, gradient oracle."""

from .gradcheck import finite_diff_grad, relative_error
from .mlp import (
    ConfigurationError,
    MlpGrads,
    MlpParams,
    backprop,
    mlp_apply,
    mlp_forward,
    mlp_init,
    power_iterate,
    spectral_normalize,
)
from .optim import AdamState, NonFiniteGradient, adam_step
from .tape import Tape, TapeError, Var

__all__ = [
    "AdamState",
    "ConfigurationError",
    "MlpGrads",
    "MlpParams",
    "NonFiniteGradient",
    "Tape",
    "TapeError",
    "Var",
    "adam_step",
    "backprop",
    "finite_diff_grad",
    "mlp_apply",
    "mlp_forward",
    "mlp_init",
    "power_iterate",
    "relative_error",
    "spectral_normalize",
]

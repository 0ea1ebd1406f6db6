"""Classical controllers: LQR on the re-anchored local goal, droop, fixed nominal."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..environments import EnvConfigError, EnvironmentModel
from .lqr import care_solve


@dataclass
class BaselineSpec:
    kind: str = "lqr"
    Q: list | None = None
    R: list | None = None
    gain: float = 1.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in ("lqr", "droop", "nominal"):
            raise EnvConfigError(f"unknown baseline kind {self.kind!r}")


class LqrController:
    """u_i = u_eq - K T (x_i - x_goal_local), with the goal re-anchored every step."""

    def __init__(self, env: EnvironmentModel, Q=None, R=None):
        A, B, T, u_eq = env.linearization()
        Q = np.eye(A.shape[0]) if Q is None else np.asarray(Q, dtype=np.float64)
        R = np.eye(B.shape[1]) if R is None else np.asarray(R, dtype=np.float64)
        self.env = env
        self.P, self.K = care_solve(A, B, Q, R)
        self.A, self.B, self.T, self.u_eq = A, B, T, np.asarray(u_eq, dtype=np.float64)
        self.KT = self.K @ T

    def __call__(self, X, beta):
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 2
        goal = self.env.local_goal(X, beta)
        Xb = X[None] if single else X
        U = self.u_eq - np.einsum("pd,bnd->bnp", self.KT, Xb - goal)
        return U[0] if single else U


class DroopController:
    """Proportional feedback toward the per-node reference: u = -c (x - x_ref)."""

    def __init__(self, env: EnvironmentModel, gain=1.0):
        if env.state_dim != env.control_dim:
            raise EnvConfigError("droop control needs one input per state")
        self.env = env
        self.gain = float(gain)
        self.ref = env.goal_offset()

    def __call__(self, X, beta):
        return -self.gain * (np.asarray(X, dtype=np.float64) - self.ref)


def make_baseline(env: EnvironmentModel, spec: BaselineSpec | str | None = None):
    if spec is None or isinstance(spec, str):
        spec = BaselineSpec(spec or ("droop" if env.kind == "microgrid" else "lqr"))
    if spec.kind == "nominal":
        spec = BaselineSpec("droop" if env.kind == "microgrid" else "lqr", spec.Q, spec.R,
                            spec.gain)
    if spec.kind == "lqr":
        if env.kind == "microgrid":
            raise EnvConfigError("the microgrid baseline is droop control, not LQR")
        return LqrController(env, spec.Q, spec.R)
    return DroopController(env, spec.gain)


def nominal_control(env: EnvironmentModel, X, beta, baseline=None):
    """Nominal control for a batch of network states (LQR, or droop for microgrids)."""
    ctrl = baseline if callable(baseline) else make_baseline(env, baseline)
    return ctrl(X, beta)

"""Networked, control-affine plants: ``dx_i/dt = h_i(x_i, x_N(i); beta) + G_i(x_i) u_i``.

Batched arrays use the layout ``X[b, i, :]`` for the state of node ``i`` in
sample ``b``; ``beta[b, :]`` holds the boundary/uncertainty parameters (for the
platoon the leading-truck velocity, for the drone grid the reference-trajectory
velocity). During simulation the boundary state *is* ``beta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class EnvConfigError(ValueError):
    pass


class RolloutAbort(FloatingPointError):
    def __init__(self, step: int, message: str = "non-finite state"):
        super().__init__(f"{message} at step {step}")
        self.step = step


@dataclass
class NetworkTopology:
    """Neighbour slots per node; ``None`` marks a boundary pseudo-node."""

    n: int
    neighbors: list[list[int | None]]
    share_group: list[int]
    state_dims: list[int]
    control_dims: list[int]
    slot_names: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.neighbors) != self.n or len(self.share_group) != self.n:
            raise EnvConfigError("per-node lists must have length n")
        for i, slots in enumerate(self.neighbors):
            for j in slots:
                if j is None:
                    continue
                if not 0 <= j < self.n:
                    raise EnvConfigError(f"node {i}: neighbour index {j} out of range")
                if j == i:
                    raise EnvConfigError(f"node {i} lists itself as a neighbour")
        dims = {}
        for i, g in enumerate(self.share_group):
            key = (self.state_dims[i], self.control_dims[i])
            if dims.setdefault(g, key) != key:
                raise EnvConfigError(f"share group {g} mixes state/control dimensions")

    @property
    def n_slots(self) -> int:
        return max((len(s) for s in self.neighbors), default=0)

    @property
    def groups(self) -> list[int]:
        return sorted(set(self.share_group))

    def members(self, group: int) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.share_group) == group)

    def slot_index(self) -> np.ndarray:
        """(n, n_slots) neighbour indices; boundary and padding map to ``n``."""
        idx = np.full((self.n, self.n_slots), self.n, dtype=np.int64)
        for i, slots in enumerate(self.neighbors):
            for s, j in enumerate(slots):
                if j is not None:
                    idx[i, s] = j
        return idx

    def real_neighbors(self, i: int) -> list[int]:
        return [j for j in self.neighbors[i] if j is not None]

    def to_dict(self) -> dict:
        return {"n": self.n, "neighbors": self.neighbors, "share_group": self.share_group,
                "state_dims": self.state_dims, "control_dims": self.control_dims,
                "slot_names": list(self.slot_names)}


@dataclass
class NetworkState:
    x: np.ndarray
    boundary: np.ndarray
    t: float = 0.0
    step: int = 0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.boundary = np.asarray(self.boundary, dtype=np.float64)

    def copy(self) -> "NetworkState":
        return NetworkState(self.x.copy(), self.boundary.copy(), self.t, self.step)


@dataclass
class Box:
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        self.low = np.asarray(self.low, dtype=np.float64)
        self.high = np.asarray(self.high, dtype=np.float64)
        if self.low.shape != self.high.shape:
            raise EnvConfigError("box bounds differ in shape")

    def sample(self, rng, shape) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=tuple(shape) + self.low.shape)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.low + self.high)

    def to_dict(self) -> dict:
        return {"low": self.low.tolist(), "high": self.high.tolist()}


@dataclass
class Scenario:
    """Boundary driver for test rollouts plus the initial-state box."""

    profile: str
    params: dict
    init_box: Box
    seed: int = 0

    def initial_boundary(self) -> np.ndarray:
        return np.asarray(self.params["initial"], dtype=np.float64).reshape(-1)

    def advance(self, boundary: np.ndarray, step: int, dt: float) -> np.ndarray:
        p = self.params
        if self.profile == "constant":
            return boundary.copy()
        if self.profile == "sin_accel":
            # explicit Euler on v' = amplitude * sin(frequency * t * dt) + offset
            accel = p.get("amplitude", 1.0) * np.sin(p.get("frequency", 1.0) * step * dt) \
                + p.get("offset", 0.0)
            out = boundary.copy()
            out[0] = boundary[0] + dt * accel
            if "min_velocity" in p:
                out[0] = max(out[0], p["min_velocity"])
            return out
        raise EnvConfigError(f"unknown scenario profile {self.profile!r}")

    def to_dict(self) -> dict:
        return {"profile": self.profile, **self.params}


@dataclass
class EnvironmentModel:
    """Common machinery; subclasses define the drift, input matrix and goal set."""

    topology: NetworkTopology
    dt: float
    horizon: int
    train_box: Box
    test_init_box: Box
    actuation_bounds: Box
    uncertainty_vertices: np.ndarray
    scenario: Scenario
    reward_constant: float = 1.0
    alpha: float = 1.0
    config: dict = field(default_factory=dict)

    kind = "abstract"

    def __post_init__(self):
        if self.dt <= 0:
            raise EnvConfigError("dt must be positive")
        if np.any(self.train_box.low >= self.train_box.high):
            raise EnvConfigError("train box needs low < high on every axis")
        raw = np.asarray(self.uncertainty_vertices, dtype=np.float64)
        self.uncertainty_vertices = np.atleast_2d(raw)
        if raw.shape[0] < 1 or self.uncertainty_vertices.shape[0] < 1:
            raise EnvConfigError("at least one uncertainty vertex is required")
        self._slot_idx = self.topology.slot_index()
        self._offset = self.goal_offset()

    # -- structure -------------------------------------------------------
    @property
    def n(self) -> int:
        return self.topology.n

    @property
    def state_dim(self) -> int:
        return self.topology.state_dims[0]

    @property
    def control_dim(self) -> int:
        return self.topology.control_dims[0]

    @property
    def beta_dim(self) -> int:
        return self.uncertainty_vertices.shape[1]

    def goal_offset(self) -> np.ndarray:
        """(n, d) per-node shift applied before the certificate sees the state."""
        return np.zeros((self.n, self.state_dim))

    def goal_residual_matrix(self) -> np.ndarray:
        """Orthogonal projector onto the normal space of the goal set."""
        raise NotImplementedError

    # -- dynamics ----------------------------------------------------------
    def drift(self, X, beta) -> np.ndarray:
        raise NotImplementedError

    def input_matrix(self, X, beta) -> np.ndarray:
        raise NotImplementedError

    def derivative(self, X, U, beta) -> np.ndarray:
        X, beta = self._batch(X, beta)
        U = np.asarray(U, dtype=np.float64).reshape(X.shape[0], self.n, self.control_dim)
        G = self.input_matrix(X, beta)
        return self.drift(X, beta) + np.einsum("bidp,bip->bid", G, U)

    def clamp(self, U) -> np.ndarray:
        return np.clip(U, self.actuation_bounds.low, self.actuation_bounds.high)

    def _batch(self, X, beta):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        beta = np.asarray(beta, dtype=np.float64).reshape(-1, self.beta_dim) \
            if self.beta_dim else np.zeros((X.shape[0], 0))
        if beta.shape[0] == 1 and X.shape[0] > 1:
            beta = np.repeat(beta, X.shape[0], axis=0)
        return X, beta

    def _ext(self, values, fill) -> np.ndarray:
        """Append a boundary column so ``_slot_idx`` can gather from it."""
        fill = np.broadcast_to(np.asarray(fill, dtype=np.float64).reshape(-1, 1),
                               (values.shape[0], 1))
        return np.concatenate([values, fill], axis=1)

    # -- goal set ----------------------------------------------------------
    def project_to_goal(self, X) -> np.ndarray:
        raise NotImplementedError

    def dist_to_goal(self, X) -> np.ndarray:
        """Euclidean distance of each node state to its goal set."""
        X = np.asarray(X, dtype=np.float64)
        R = self.goal_residual_matrix()
        r = (X - self._offset) @ R.T
        return np.sqrt(np.sum(r * r, axis=-1))

    # -- sampling -------------------------------------------------------------
    def sample_beta(self, count, rng) -> np.ndarray:
        V = self.uncertainty_vertices
        if V.shape[0] == 1:
            return np.repeat(V, count, axis=0)
        w = rng.dirichlet(np.ones(V.shape[0]), size=count)
        return w @ V

    def sample_states(self, count, rng):
        """I.i.d. uniform node states from the train box, and hull-sampled beta."""
        X = self.train_box.sample(rng, (count, self.n))
        return X, self.sample_beta(count, rng)

    def sample_goal_states(self, count, rng) -> np.ndarray:
        return self.project_to_goal(self.train_box.sample(rng, (count, self.n)))

    def sample_initial_state(self, rng) -> NetworkState:
        """Physically consistent initial state for a test rollout."""
        raise NotImplementedError

    # -- nominal control helpers -------------------------------------------------
    def local_goal(self, X, beta) -> np.ndarray:
        """Per-node goal point re-anchored from local observations."""
        raise NotImplementedError

    def linearization(self):
        """Reduced single-subsystem model ``(A, B, T, u_eq)`` about the local goal.

        Reduced coordinates are ``(x - x_goal) @ T.T``.
        """
        raise NotImplementedError

    def to_config(self) -> dict:
        return dict(self.config)


def step_euler(env: EnvironmentModel, state: NetworkState, controls,
               scenario: Scenario | None = None) -> NetworkState:
    """Advance one explicit Euler step with clamped controls."""
    U = env.clamp(np.asarray(controls, dtype=np.float64).reshape(env.n, env.control_dim))
    with np.errstate(over="ignore", invalid="ignore"):
        dx = env.derivative(state.x, U, state.boundary)[0]
        x_next = state.x + env.dt * dx
    boundary = state.boundary if scenario is None else \
        scenario.advance(state.boundary, state.step, env.dt)
    if not (np.all(np.isfinite(x_next)) and np.all(np.isfinite(boundary))):
        raise RolloutAbort(state.step + 1)
    return NetworkState(x_next, boundary, state.t + env.dt, state.step + 1)

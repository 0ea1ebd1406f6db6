from __future__ import annotations

import numpy as np

from .base import EnvironmentModel, NetworkState, NetworkTopology

SQRT2 = np.sqrt(2.0)


def platoon_derivative(x_i, v_front, v_behind, u_i) -> np.ndarray:
    """Truck state ``[p_f, p_b, v]`` driven by acceleration ``u_i = [a]``."""
    x_i = np.asarray(x_i, dtype=np.float64)
    a = float(np.asarray(u_i, dtype=np.float64).reshape(-1)[0])
    out = np.array([v_front - x_i[2], x_i[2] - v_behind, a])
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite platoon derivative")
    return out


def platoon_topology(n: int, share_groups="ends_middle") -> NetworkTopology:
    neighbors = []
    for i in range(n):
        front = i - 1 if i > 0 else None
        behind = i + 1 if i < n - 1 else None
        neighbors.append([front, behind])
    if share_groups == "ends_middle":
        groups = [0 if i in (0, n - 1) else 1 for i in range(n)]
    elif share_groups == "single":
        groups = [0] * n
    elif share_groups == "per_node":
        groups = list(range(n))
    else:
        groups = [int(g) for g in share_groups]
    return NetworkTopology(n, neighbors, groups, [3] * n, [1] * n, ("front", "behind"))


class PlatoonEnv(EnvironmentModel):
    """Chain of trucks between a free leader (index 0) and a last truck (n+1).

    The last truck mirrors the leader's velocity, so ``beta = [v_0]`` drives
    both boundary pseudo-nodes and the platoon length stays constant.
    """

    kind = "platoon"

    def goal_residual_matrix(self) -> np.ndarray:
        R = np.zeros((3, 3))
        R[:2, :2] = [[0.5, -0.5], [-0.5, 0.5]]
        return R

    def drift(self, X, beta) -> np.ndarray:
        X, beta = self._batch(X, beta)
        v = X[:, :, 2]
        v_ext = self._ext(v, beta[:, 0])
        v_front = v_ext[:, self._slot_idx[:, 0]]
        v_behind = v_ext[:, self._slot_idx[:, 1]]
        return np.stack([v_front - v, v - v_behind, np.zeros_like(v)], axis=-1)

    def input_matrix(self, X, beta) -> np.ndarray:
        X, _ = self._batch(X, beta)
        G = np.zeros(X.shape[:2] + (3, 1))
        G[:, :, 2, 0] = 1.0
        return G

    def project_to_goal(self, X) -> np.ndarray:
        X = np.array(X, dtype=np.float64, copy=True)
        mid = 0.5 * (X[..., 0] + X[..., 1])
        X[..., 0] = mid
        X[..., 1] = mid
        return X

    def dist_to_goal(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.abs(X[..., 0] - X[..., 1]) / SQRT2

    def sample_initial_state(self, rng) -> NetworkState:
        box = self.test_init_box
        gaps = rng.uniform(box.low[0], box.high[0], size=self.n + 1)
        v = rng.uniform(box.low[2], box.high[2], size=self.n)
        x = np.stack([gaps[:-1], gaps[1:], v], axis=-1)
        return NetworkState(x, self.scenario.initial_boundary())

    def gaps(self, x) -> np.ndarray:
        """Inter-truck distances ``g_0..g_n`` from a consistent node state."""
        x = np.asarray(x)
        return np.concatenate([x[..., :, 0], x[..., -1:, 1]], axis=-1)

    def local_goal(self, X, beta) -> np.ndarray:
        X, beta = self._batch(X, beta)
        v_ext = self._ext(X[:, :, 2], beta[:, 0])
        v_bar = 0.5 * (v_ext[:, self._slot_idx[:, 0]] + v_ext[:, self._slot_idx[:, 1]])
        mid = 0.5 * (X[:, :, 0] + X[:, :, 1])
        return np.stack([mid, mid, v_bar], axis=-1)

    def linearization(self):
        # rho = (p_f - p_b)/sqrt(2), w = v - v_bar; rho' = -sqrt(2) w, w' = a
        T = np.array([[1 / SQRT2, -1 / SQRT2, 0.0], [0.0, 0.0, 1.0]])
        A = np.array([[0.0, -SQRT2], [0.0, 0.0]])
        B = np.array([[0.0], [1.0]])
        return A, B, T, np.zeros(1)

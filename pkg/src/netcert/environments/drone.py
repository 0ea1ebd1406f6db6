from __future__ import annotations

import numpy as np

from .base import EnvironmentModel, NetworkState, NetworkTopology

SQRT2 = np.sqrt(2.0)

# state layout
PL, PR, PU, PD, THETA, VX, VY, OMEGA = range(8)


def drone_derivative(x_i, neighbor_velocities, u_i, mass=1.0, inertia=0.01, arm=0.25,
                     gravity=9.81):
    """Planar drone in a 2-D formation.

    ``neighbor_velocities`` maps ``left/right/up/down`` to ``(v_x, v_y)``.
    Negative propeller forces are clamped to zero; the second return value
    flags whether that happened.
    """
    x = np.asarray(x_i, dtype=np.float64)
    u = np.asarray(u_i, dtype=np.float64).reshape(2)
    clamped = bool(np.any(u < 0))
    u = np.maximum(u, 0.0)
    nv = {k: np.asarray(v, dtype=np.float64) for k, v in neighbor_velocities.items()}
    vx, vy, theta = x[VX], x[VY], x[THETA]
    total = u[0] + u[1]
    dx = np.array([
        vx - nv["left"][0],
        nv["right"][0] - vx,
        nv["up"][1] - vy,
        vy - nv["down"][1],
        x[OMEGA],
        -total * np.sin(theta) / mass,
        total * np.cos(theta) / mass - gravity,
        arm * (u[0] - u[1]) / inertia,
    ])
    return dx, clamped


def drone_topology(rows: int, cols: int) -> NetworkTopology:
    neighbors = []
    for r in range(rows):
        for c in range(cols):
            left = r * cols + c - 1 if c > 0 else None
            right = r * cols + c + 1 if c < cols - 1 else None
            up = (r - 1) * cols + c if r > 0 else None
            down = (r + 1) * cols + c if r < rows - 1 else None
            neighbors.append([left, right, up, down])
    n = rows * cols
    return NetworkTopology(n, neighbors, [0] * n, [8] * n, [2] * n,
                           ("left", "right", "up", "down"))


class DroneEnv(EnvironmentModel):
    """Grid of planar drones tracking a reference moving along +x.

    Boundary pseudo-neighbours move with the reference velocity
    ``beta = [v_x_ref, v_y_ref]``.
    """

    kind = "drone"

    @property
    def physics(self) -> dict:
        return self.config.get("physics", {})

    @property
    def rows(self) -> int:
        return int(self.config["rows"])

    @property
    def cols(self) -> int:
        return int(self.config["cols"])

    def _phys(self):
        p = self.physics
        return (p.get("mass", 1.0), p.get("inertia", 0.01), p.get("arm", 0.25),
                p.get("gravity", 9.81))

    def goal_residual_matrix(self) -> np.ndarray:
        R = np.zeros((8, 8))
        R[PL:PR + 1, PL:PR + 1] = [[0.5, -0.5], [-0.5, 0.5]]
        R[PU:PD + 1, PU:PD + 1] = [[0.5, -0.5], [-0.5, 0.5]]
        R[THETA, THETA] = 1.0
        R[OMEGA, OMEGA] = 1.0
        return R

    def _neighbor_velocities(self, X, beta):
        vx_ext = self._ext(X[:, :, VX], beta[:, 0])
        vy_ext = self._ext(X[:, :, VY], beta[:, 1])
        s = self._slot_idx
        return vx_ext, vy_ext, s

    def drift(self, X, beta) -> np.ndarray:
        X, beta = self._batch(X, beta)
        _, _, _, g = self._phys()
        vx_ext, vy_ext, s = self._neighbor_velocities(X, beta)
        vx, vy = X[:, :, VX], X[:, :, VY]
        zero = np.zeros_like(vx)
        return np.stack([
            vx - vx_ext[:, s[:, 0]],
            vx_ext[:, s[:, 1]] - vx,
            vy_ext[:, s[:, 2]] - vy,
            vy - vy_ext[:, s[:, 3]],
            X[:, :, OMEGA],
            zero,
            zero - g,
            zero,
        ], axis=-1)

    def input_matrix(self, X, beta) -> np.ndarray:
        X, _ = self._batch(X, beta)
        m, inertia, arm, _ = self._phys()
        G = np.zeros(X.shape[:2] + (8, 2))
        sin, cos = np.sin(X[:, :, THETA]), np.cos(X[:, :, THETA])
        G[:, :, VX, 0] = G[:, :, VX, 1] = -sin / m
        G[:, :, VY, 0] = G[:, :, VY, 1] = cos / m
        G[:, :, OMEGA, 0] = arm / inertia
        G[:, :, OMEGA, 1] = -arm / inertia
        return G

    def project_to_goal(self, X) -> np.ndarray:
        X = np.array(X, dtype=np.float64, copy=True)
        for a, b in ((PL, PR), (PU, PD)):
            mid = 0.5 * (X[..., a] + X[..., b])
            X[..., a] = mid
            X[..., b] = mid
        X[..., THETA] = 0.0
        X[..., OMEGA] = 0.0
        return X

    def dist_to_goal(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.sqrt(0.5 * (X[..., PL] - X[..., PR]) ** 2
                       + 0.5 * (X[..., PU] - X[..., PD]) ** 2
                       + X[..., THETA] ** 2 + X[..., OMEGA] ** 2)

    def sample_initial_state(self, rng) -> NetworkState:
        box = self.test_init_box
        rows, cols = self.rows, self.cols
        hgaps = rng.uniform(box.low[PL], box.high[PL], size=(rows, cols + 1))
        vgaps = rng.uniform(box.low[PU], box.high[PU], size=(rows + 1, cols))
        x = np.zeros((self.n, 8))
        for r in range(rows):
            for c in range(cols):
                i = r * cols + c
                x[i, PL], x[i, PR] = hgaps[r, c], hgaps[r, c + 1]
                x[i, PU], x[i, PD] = vgaps[r, c], vgaps[r + 1, c]
        for k in (THETA, VX, VY, OMEGA):
            x[:, k] = rng.uniform(box.low[k], box.high[k], size=self.n)
        return NetworkState(x, self.scenario.initial_boundary())

    def local_goal(self, X, beta) -> np.ndarray:
        X, beta = self._batch(X, beta)
        vx_ext, vy_ext, s = self._neighbor_velocities(X, beta)
        goal = self.project_to_goal(X)
        goal[:, :, VX] = 0.5 * (vx_ext[:, s[:, 0]] + vx_ext[:, s[:, 1]])
        goal[:, :, VY] = 0.5 * (vy_ext[:, s[:, 2]] + vy_ext[:, s[:, 3]])
        return goal

    def hover_input(self) -> np.ndarray:
        m, _, _, g = self._phys()
        return np.full(2, 0.5 * m * g)

    def linearization(self):
        m, inertia, arm, g = self._phys()
        # reduced: rho_x, rho_y, theta, w_x, w_y, omega
        T = np.zeros((6, 8))
        T[0, PL], T[0, PR] = 1 / SQRT2, -1 / SQRT2
        T[1, PU], T[1, PD] = 1 / SQRT2, -1 / SQRT2
        T[2, THETA] = T[3, VX] = T[4, VY] = T[5, OMEGA] = 1.0
        A = np.zeros((6, 6))
        A[0, 3] = SQRT2
        A[1, 4] = -SQRT2
        A[2, 5] = 1.0
        A[3, 2] = -g
        B = np.zeros((6, 2))
        B[4, :] = 1.0 / m
        B[5, 0], B[5, 1] = arm / inertia, -arm / inertia
        return A, B, T, self.hover_input()

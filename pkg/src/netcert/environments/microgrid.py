from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import EnvConfigError, EnvironmentModel, NetworkState, NetworkTopology


@dataclass
class MicrogridNode:
    M_a: float = 1.0
    M_v: float = 1.0
    D_a: float = 1.0
    D_v: float = 1.0
    delta_ref: float = 0.0
    E_ref: float = 1.0
    P_ref: float = 0.0
    Q_ref: float = 0.0
    G: float = 0.0
    B: float = 0.0


def microgrid_derivative(x_i, neighbor_states, u_i, node: MicrogridNode) -> np.ndarray:
    """Angle/magnitude dynamics of one microgrid.

    ``neighbor_states`` is a sequence of ``(delta_j, E_j, Y_ji, sigma_ji)``.
    """
    if node.M_a == 0 or node.M_v == 0:
        raise EnvConfigError("inertia coefficients must be non-zero")
    delta, E = float(x_i[0]), float(x_i[1])
    uP, uQ = (float(v) for v in np.asarray(u_i, dtype=np.float64).reshape(2))
    flow_p = flow_q = 0.0
    for d_j, E_j, Y, sigma in neighbor_states:
        ang = d_j - delta - sigma
        flow_p += E * E_j * Y * np.cos(ang)
        flow_q += E * E_j * Y * np.sin(ang)
    ddelta = (uP + node.D_a * (node.P_ref - node.G * E * E - flow_p)
              - (delta - node.delta_ref)) / node.M_a
    dE = (uQ + node.D_v * (node.Q_ref + node.B * E * E - flow_q)
          - (E - node.E_ref)) / node.M_v
    return np.array([ddelta, dE])


def balance_references(nodes, edges) -> None:
    """Set ``P_ref``/``Q_ref`` so the reference point is an equilibrium at u = 0."""
    flows_p = np.zeros(len(nodes))
    flows_q = np.zeros(len(nodes))
    for i, j, Y, sigma in edges:
        for a, b in ((i, j), (j, i)):
            na, nb = nodes[a], nodes[b]
            ang = nb.delta_ref - na.delta_ref - sigma
            flows_p[a] += na.E_ref * nb.E_ref * Y * np.cos(ang)
            flows_q[a] += na.E_ref * nb.E_ref * Y * np.sin(ang)
    for k, nd in enumerate(nodes):
        nd.P_ref = nd.G * nd.E_ref ** 2 + flows_p[k]
        nd.Q_ref = -nd.B * nd.E_ref ** 2 + flows_q[k]


def microgrid_topology(n, edges, share_groups="single") -> NetworkTopology:
    neighbors = [[] for _ in range(n)]
    for i, j, _, _ in edges:
        neighbors[i].append(j)
        neighbors[j].append(i)
    if share_groups == "single":
        groups = [0] * n
    elif share_groups == "per_node":
        groups = list(range(n))
    else:
        groups = [int(g) for g in share_groups]
    return NetworkTopology(n, neighbors, groups, [2] * n, [2] * n)


class MicrogridEnv(EnvironmentModel):
    """Networked microgrids with states ``(delta_i, E_i)`` and point goals."""

    kind = "microgrid"

    def __post_init__(self):
        phys = self.config.get("physics", {})
        n = self.config["n"]
        self.nodes = [MicrogridNode(**nd) for nd in phys["nodes"]]
        if len(self.nodes) != n:
            raise EnvConfigError("one physics entry per microgrid is required")
        if any(nd.M_a == 0 or nd.M_v == 0 for nd in self.nodes):
            raise EnvConfigError("inertia coefficients must be non-zero")
        self.edges = [tuple(e) for e in phys["edges"]]
        super().__post_init__()
        s = self._slot_idx
        self._Y = np.zeros(s.shape)
        self._sigma = np.zeros(s.shape)
        lookup = {}
        for i, j, Y, sigma in self.edges:
            lookup[(i, j)] = lookup[(j, i)] = (Y, sigma)
        for i, slots in enumerate(self.topology.neighbors):
            for k, j in enumerate(slots):
                self._Y[i, k], self._sigma[i, k] = lookup[(i, j)]
        self._arr = {f: np.array([getattr(nd, f) for nd in self.nodes])
                     for f in MicrogridNode.__dataclass_fields__}

    def goal_offset(self) -> np.ndarray:
        return np.stack([[nd.delta_ref, nd.E_ref] for nd in self.nodes])

    def goal_residual_matrix(self) -> np.ndarray:
        return np.eye(2)

    def drift(self, X, beta) -> np.ndarray:
        X, beta = self._batch(X, beta)
        a = self._arr
        delta, E = X[:, :, 0], X[:, :, 1]
        s = self._slot_idx
        d_ext = self._ext(delta, 0.0)[:, s]
        E_ext = self._ext(E, 0.0)[:, s]
        ang = d_ext - delta[:, :, None] - self._sigma
        w = E[:, :, None] * E_ext * self._Y
        flow_p = np.sum(w * np.cos(ang), axis=-1)
        flow_q = np.sum(w * np.sin(ang), axis=-1)
        h_d = (a["D_a"] * (a["P_ref"] - a["G"] * E * E - flow_p)
               - (delta - a["delta_ref"])) / a["M_a"]
        h_E = (a["D_v"] * (a["Q_ref"] + a["B"] * E * E - flow_q)
               - (E - a["E_ref"])) / a["M_v"]
        return np.stack([h_d, h_E], axis=-1)

    def input_matrix(self, X, beta) -> np.ndarray:
        X, _ = self._batch(X, beta)
        G = np.zeros(X.shape[:2] + (2, 2))
        G[:, :, 0, 0] = 1.0 / self._arr["M_a"]
        G[:, :, 1, 1] = 1.0 / self._arr["M_v"]
        return G

    def project_to_goal(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.broadcast_to(self._offset, X.shape).copy()

    def dist_to_goal(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        d = X - self._offset
        return np.sqrt(np.sum(d * d, axis=-1))

    def sample_initial_state(self, rng) -> NetworkState:
        x = self.test_init_box.sample(rng, (self.n,))
        return NetworkState(x, self.scenario.initial_boundary())

    def local_goal(self, X, beta) -> np.ndarray:
        X, _ = self._batch(X, beta)
        return np.broadcast_to(self._offset, X.shape).copy()

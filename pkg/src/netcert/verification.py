"""Sample-based checks of the implication condition, robust vertex checks and the
composed max-V rollout monitor. Nothing here proves anything; every routine
reports rates and counterexamples.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .certificates import (CertificateBundle, bundle_v, network_values, neighbor_max,
                           node_alpha, node_gain_k, numpy_view, policy_eval, v_eval, v_grad)
from .diffcore.tape import _sigmoid
from .environments import EnvironmentModel
from .rng import named_rng

UNCHECKED = [
    "class-K-infinity sandwich bounds on each V_i are not certified from samples; "
    "only V = 0 on goal samples and V > 0 off the goal tube are estimated",
    "the implication is checked on finitely many samples, not on the whole state space",
]

MAX_GRID_POINTS = 10 ** 6


class GridTooLarge(ValueError):
    pass


@dataclass
class CheckReport:
    n_samples: int
    margins: dict
    goal_zero_mean: float
    positivity_min: float
    positivity_violations: int
    premise_rate: list
    implication_violation_rate: list
    unconditional_violation_rate: list
    counterexamples: list
    unchecked_assumptions: list = field(default_factory=lambda: list(UNCHECKED))
    beta: list | None = None

    @property
    def max_rate(self) -> float:
        return float(max(self.implication_violation_rate, default=0.0))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def summary(self) -> str:
        lines = [f"samples: {self.n_samples}  margins: m_A={self.margins['m_A']} "
                 f"m_B={self.margins['m_B']}",
                 f"mean |V| on goal samples: {self.goal_zero_mean:.3e}",
                 f"min V off the goal tube: {self.positivity_min:.3e}"]
        for i, (r, u) in enumerate(zip(self.implication_violation_rate,
                                       self.unconditional_violation_rate)):
            lines.append(f"node {i}: conditional violation rate {r:.4f} (unconditional {u:.4f})")
        return "\n".join(lines)


def classify_states(bundle: CertificateBundle, env: EnvironmentModel, X, beta,
                    m_A=0.0, m_B=0.0, controls=None):
    """Batched predicate: premise and violation masks plus the decrease residual.

    Premise: V_i >= chi(max_j V_j) - m_A.  Violation: premise and
    dV_i/dt + alpha_i V_i > m_B, with dV/dt from a forward tangent.
    """
    out = network_values(bundle, env, X, beta, lie="analytic", controls=controls)
    V, lie = out["V"], out["lie"]
    view = numpy_view(bundle)
    chi = _sigmoid(node_gain_k(bundle, view)) * neighbor_max(bundle, V)
    premise = V >= chi - m_A
    residual = lie + node_alpha(bundle) * V
    return premise, premise & (residual > m_B), residual, V


def _rates(premise, violation):
    n_prem = premise.sum(axis=0)
    n_viol = violation.sum(axis=0)
    cond = np.where(n_prem > 0, n_viol / np.maximum(n_prem, 1), 0.0)
    return n_prem, n_viol, cond


def check_certificate(bundle: CertificateBundle, env: EnvironmentModel, n_samples=10000,
                      m_A=0.0, m_B=0.0, delta_off=1e-2, seed=0, beta=None, states=None,
                      n_counterexamples=10, chunk=20000, n_goal=None) -> CheckReport:
    """Monte-Carlo estimate of how often the implication fails, per node.

    ``beta`` pins the uncertainty parameter; otherwise it is drawn from the
    hull. ``states=(X, beta)`` evaluates a given point set instead of sampling.
    """
    if m_A < 0 or m_B < 0:
        raise ValueError("margins must be non-negative")
    rng = named_rng(seed, "verify")
    if states is None:
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        X = env.train_box.sample(rng, (n_samples, env.n))
        if beta is None:
            B = env.sample_beta(n_samples, rng)
        else:
            B = np.repeat(np.asarray(beta, dtype=np.float64).reshape(1, -1), n_samples, axis=0)
    else:
        X, B = (np.asarray(a, dtype=np.float64) for a in states)
        B = B.reshape(X.shape[0], -1)
    N = X.shape[0]
    prem, viol, res = [], [], []
    for s in range(0, N, chunk):
        p, v, r, _ = classify_states(bundle, env, X[s:s + chunk], B[s:s + chunk], m_A, m_B)
        prem.append(p)
        viol.append(v)
        res.append(r)
    premise, violation, residual = (np.concatenate(a) for a in (prem, viol, res))
    n_prem, n_viol, cond = _rates(premise, violation)

    cex = []
    if violation.any():
        b_idx, node = np.nonzero(violation)
        order = np.argsort(-residual[b_idx, node], kind="stable")[:n_counterexamples]
        for k in order:
            bi, ni = int(b_idx[k]), int(node[k])
            cex.append({"sample": bi, "node": ni, "residual": float(residual[bi, ni]),
                        "state": X[bi].tolist(), "beta": B[bi].tolist()})

    n_goal = min(N, 10000) if n_goal is None else n_goal
    goal_rng = named_rng(seed, "verify/goal")
    Xg = env.sample_goal_states(n_goal, goal_rng)
    goal_zero_mean = float(np.mean(np.abs(bundle_v(bundle, Xg)))) if n_goal else 0.0
    Xo = env.train_box.sample(goal_rng, (n_goal, env.n))
    Vo = bundle_v(bundle, Xo) if n_goal else np.zeros((0, env.n))
    off = env.dist_to_goal(Xo) > delta_off
    pos_min = float(Vo[off].min()) if off.any() else float("nan")
    return CheckReport(
        n_samples=int(N),
        margins={"m_A": float(m_A), "m_B": float(m_B), "delta_off": float(delta_off)},
        goal_zero_mean=goal_zero_mean,
        positivity_min=pos_min,
        positivity_violations=int(np.sum(Vo[off] <= 0)),
        premise_rate=(n_prem / N).tolist(),
        implication_violation_rate=cond.tolist(),
        unconditional_violation_rate=(n_viol / N).tolist(),
        counterexamples=cex,
        beta=None if beta is None else np.asarray(beta, dtype=np.float64).reshape(-1).tolist(),
    )


# -- exhaustive oracle ---------------------------------------------------------------


def grid_points(env: EnvironmentModel, points_per_axis) -> np.ndarray:
    """Axis-aligned grid over the train box of the whole network state.

    ``points_per_axis`` is an int or an (n, d) array of counts; an axis with a
    single point sits at the box centre.
    """
    counts = np.broadcast_to(np.asarray(points_per_axis, dtype=np.int64),
                             (env.n, env.state_dim)).reshape(-1)
    if np.any(counts < 1):
        raise ValueError("grid needs at least one point per axis")
    total = int(np.prod(counts.astype(object)))
    if total > MAX_GRID_POINTS:
        raise GridTooLarge(f"grid has {total} points; the oracle accepts at most "
                           f"{MAX_GRID_POINTS}")
    lo = np.tile(env.train_box.low, env.n)
    hi = np.tile(env.train_box.high, env.n)
    axes = [np.array([0.5 * (a + b)]) if c == 1 else np.linspace(a, b, c)
            for a, b, c in zip(lo, hi, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=-1).reshape(total, env.n,
                                                                     env.state_dim)


def implication_oracle(bundle: CertificateBundle, env: EnvironmentModel, grid_spec,
                       m_A=0.0, m_B=0.0) -> set:
    """Exact violating set on a grid.

    Uses a separate route from :func:`check_certificate`: node-by-node V values
    and reverse-mode gradients instead of the grouped forward-tangent pass.
    ``grid_spec`` holds ``points_per_axis`` and optionally ``beta``.
    """
    spec = dict(grid_spec) if isinstance(grid_spec, dict) else {"points_per_axis": grid_spec}
    X = grid_points(env, spec["points_per_axis"])
    beta = np.asarray(spec.get("beta", env.uncertainty_vertices[0]), dtype=np.float64)
    topo = bundle.topology
    offset = bundle.goal_offset
    V = np.empty((X.shape[0], topo.n))
    U = np.empty((X.shape[0], topo.n, env.control_dim))
    for i in range(topo.n):
        g = topo.share_group[i]
        V[:, i] = v_eval(bundle.certificates[g], X[:, i], offset[i])
        U[:, i] = policy_eval(bundle.policies[g], X[:, i], offset[i])
    F = env.derivative(X, U, beta[None])
    violating = set()
    for i in range(topo.n):
        cert = bundle.certificates[topo.share_group[i]]
        nb = topo.real_neighbors(i)
        top = np.max(V[:, nb], axis=1) if nb else np.zeros(X.shape[0])
        premise = V[:, i] >= _sigmoid(cert.gain_k) * top - m_A
        lie = np.einsum("bd,bd->b", v_grad(cert, X[:, i], offset[i]), F[:, i])
        bad = premise & (lie + cert.alpha * V[:, i] > m_B)
        violating.update((int(b), i) for b in np.flatnonzero(bad))
    return violating


def sampled_violations_on_grid(bundle, env, grid_spec, m_A=0.0, m_B=0.0) -> set:
    spec = dict(grid_spec) if isinstance(grid_spec, dict) else {"points_per_axis": grid_spec}
    X = grid_points(env, spec["points_per_axis"])
    beta = np.asarray(spec.get("beta", env.uncertainty_vertices[0]), dtype=np.float64)
    B = np.repeat(beta.reshape(1, -1), X.shape[0], axis=0)
    _, viol, _, _ = classify_states(bundle, env, X, B, m_A, m_B)
    return {(int(b), int(i)) for b, i in zip(*np.nonzero(viol))}


# -- robustness over the uncertainty hull ----------------------------------------------------


def affineness_residual(env: EnvironmentModel, n_samples=1000, seed=0) -> float:
    """max |f(x,u; l b1 + (1-l) b2) - l f(x,u; b1) - (1-l) f(x,u; b2)| over samples."""
    V = env.uncertainty_vertices
    if V.shape[0] < 2:
        return 0.0
    rng = named_rng(seed, "verify/affine")
    worst = 0.0
    for a in range(V.shape[0]):
        for b in range(a + 1, V.shape[0]):
            X = env.train_box.sample(rng, (n_samples, env.n))
            U = env.actuation_bounds.sample(rng, (n_samples, env.n))
            lam = rng.uniform(size=(n_samples, 1))
            mix = lam * V[a] + (1 - lam) * V[b]
            f_mix = env.derivative(X, U, mix)
            f_a = env.derivative(X, U, V[a][None])
            f_b = env.derivative(X, U, V[b][None])
            lam3 = lam[:, :, None]
            r = f_mix - lam3 * f_a - (1 - lam3) * f_b
            worst = max(worst, float(np.max(np.linalg.norm(r, axis=-1))))
    return worst


def check_at_weights(bundle, env, weights, **kw) -> CheckReport:
    """Check with beta pinned at a convex combination of the vertices."""
    w = np.asarray(weights, dtype=np.float64)
    beta = w @ env.uncertainty_vertices
    return check_certificate(bundle, env, beta=beta, **kw)


def check_robust_vertices(bundle: CertificateBundle, env: EnvironmentModel, n_samples=10000,
                          n_interior=4, seed=0, m_A=0.0, m_B=0.0) -> dict:
    V = env.uncertainty_vertices
    kw = dict(n_samples=n_samples, seed=seed, m_A=m_A, m_B=m_B)
    if V.shape[0] < 2:
        rep = check_certificate(bundle, env, **kw)
        return {"notice": "single uncertainty vertex; plain certificate check",
                "vertex_reports": [rep.to_dict()], "interior_reports": [],
                "vertex_max_rate": rep.max_rate, "interior_max_rate": float("nan"),
                "affineness_residual": 0.0}
    vertex = []
    for k in range(V.shape[0]):
        w = np.zeros(V.shape[0])
        w[k] = 1.0
        vertex.append(check_at_weights(bundle, env, w, **kw))
    rng = named_rng(seed, "verify/interior")
    interior = []
    weights = rng.dirichlet(np.ones(V.shape[0]), size=n_interior)
    for i, w in enumerate(weights):
        interior.append(check_at_weights(bundle, env, w, **{**kw, "seed": seed + 1 + i}))
    return {
        "vertex_reports": [r.to_dict() for r in vertex],
        "interior_reports": [r.to_dict() for r in interior],
        "interior_weights": weights.tolist(),
        "vertex_max_rate": max(r.max_rate for r in vertex),
        "interior_max_rate": max((r.max_rate for r in interior), default=float("nan")),
        "affineness_residual": affineness_residual(env, seed=seed),
    }


# -- composed max-V monitor ----------------------------------------------------------


def monitor_composed_v(trace, bundle: CertificateBundle | None = None, tol=1e-3,
                       eta_frac=0.05) -> dict:
    """Decrease statistics of V(x_t) = max_i V_i(x_i,t) along a rollout.

    Steps whose tracking error is within ``eta_frac`` times the initial error
    are excluded (the goal tube). With no eligible step the fraction is 1.
    """
    states = np.asarray(trace.states)
    if states.shape[0] < 2:
        raise ValueError("trace needs at least two states")
    values = trace.values
    recomputed = bundle_v(bundle, states) if bundle is not None else None
    if values is None:
        if recomputed is None:
            raise ValueError("trace carries no V values and no bundle was given")
        values = recomputed
    Vc = np.max(values, axis=1)
    err = np.asarray(trace.distances).sum(axis=1)
    eta = eta_frac * err[0]
    steps = np.flatnonzero(err[:-1] > eta)
    ok = Vc[steps + 1] <= Vc[steps] * (1.0 + tol)
    frac = float(np.mean(ok)) if steps.size else 1.0
    inc = np.diff(Vc)
    pos = Vc > 0
    t = np.arange(Vc.size) * trace.dt
    if np.count_nonzero(pos) >= 2:
        slope = float(np.polyfit(t[pos], np.log(Vc[pos]), 1)[0])
    else:
        slope = float("nan")
    out = {
        "composed_v": Vc.tolist(),
        "eligible_steps": int(steps.size),
        "decrease_fraction": frac,
        "decay_rate_fit": -slope,
        "max_increase": float(max(inc.max(), 0.0)) if inc.size else 0.0,
        "tube": float(eta),
    }
    if recomputed is not None and trace.values is not None:
        out["trace_consistency"] = float(np.max(np.abs(np.max(recomputed, axis=1) - Vc)))
    return out

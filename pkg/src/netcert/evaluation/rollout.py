from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..certificates import CertificateBundle, bundle_controls, bundle_v
from ..environments import EnvironmentModel, NetworkState, RolloutAbort, Scenario, step_euler
from ..rng import named_rng


class PolicyController:
    """Adapter so a certificate bundle can be rolled out like a baseline."""

    def __init__(self, bundle: CertificateBundle):
        self.bundle = bundle

    def __call__(self, X, beta):
        return bundle_controls(self.bundle, X)


@dataclass
class RolloutTrace:
    states: np.ndarray       # (T+1, n, d)
    boundary: np.ndarray     # (T+1, b)
    controls: np.ndarray     # (T, n, p)
    distances: np.ndarray    # (T+1, n)
    values: np.ndarray | None  # (T+1, n) per-node V, when a bundle is supplied
    rewards: np.ndarray      # (T,)
    dt: float
    aborted: bool = False
    abort_step: int | None = None

    @property
    def n_steps(self) -> int:
        return self.controls.shape[0]

    @property
    def tracking_error(self) -> np.ndarray:
        return self.distances.sum(axis=1)


def rollout(env: EnvironmentModel, controller, scenario: Scenario | None = None,
            boundary=None, seed: int = 0, bundle: CertificateBundle | None = None,
            horizon: int | None = None, initial: NetworkState | None = None) -> RolloutTrace:
    """Simulate ``horizon`` Euler steps from a scenario-sampled initial state.

    ``controller(X, beta)`` maps the (n, d) network state to (n, p) controls.
    A non-finite state stops the rollout; the partial trace is returned flagged.
    """
    scenario = env.scenario if scenario is None else scenario
    T = env.horizon if horizon is None else int(horizon)
    rng = named_rng(seed, f"rollout/{scenario.profile}")
    state = env.sample_initial_state(rng) if initial is None else initial.copy()
    if boundary is not None:
        state.boundary = np.asarray(boundary, dtype=np.float64).reshape(-1)
    states, bounds, controls = [state.x.copy()], [state.boundary.copy()], []
    aborted, abort_step = False, None
    for _ in range(T):
        U = np.asarray(controller(state.x, state.boundary), dtype=np.float64)
        U = env.clamp(U.reshape(env.n, env.control_dim))
        try:
            if not np.all(np.isfinite(U)):
                raise RolloutAbort(state.step + 1, "non-finite control")
            state = step_euler(env, state, U, scenario)
        except RolloutAbort as exc:
            aborted, abort_step = True, exc.step
            break
        controls.append(U)
        states.append(state.x.copy())
        bounds.append(state.boundary.copy())
    states = np.asarray(states)
    dist = env.dist_to_goal(states)
    values = bundle_v(bundle, states) if bundle is not None else None
    err = dist[1:].sum(axis=1)
    controls = np.asarray(controls).reshape(-1, env.n, env.control_dim)
    return RolloutTrace(states, np.asarray(bounds), controls, dist, values,
                        env.reward_constant - err, env.dt, aborted, abort_step)


def metrics(trace: RolloutTrace, reward_constant: float | None = None, tail: int = 100) -> dict:
    if trace.states.shape[0] < 1:
        raise ValueError("empty trace")
    err = trace.tracking_error
    rewards = trace.rewards if reward_constant is None else reward_constant - err[1:]
    tail_err = err[-min(tail, err.size):]
    return {
        "tracking_error": err,
        "cumulative_reward": float(np.sum(rewards)),
        "mean_error": float(np.mean(err)),
        "final_error": float(err[-1]),
        "tail_mean_error": float(np.mean(tail_err)),
        "aborted": trace.aborted,
        "abort_step": trace.abort_step,
    }




def write_trace_csv(path, trace: RolloutTrace) -> None:
    n = trace.distances.shape[1]
    header = ["step", "time"] + [f"dist_{i}" for i in range(n)] + ["total_error", "reward"]
    err = trace.tracking_error
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in range(trace.distances.shape[0]):
            reward = "" if t == 0 else repr(float(trace.rewards[t - 1]))
            w.writerow([t, repr(t * trace.dt)] + [repr(float(v)) for v in trace.distances[t]]
                       + [repr(float(err[t])), reward])


COMPARE_COLUMNS = ["controller", "seed", "cumulative_reward", "mean_error", "final_error",
                   "tail_mean_error", "failed"]


def compare(env: EnvironmentModel, controllers: dict, seeds=(0, 1, 2, 3),
            scenario: Scenario | None = None, horizon: int | None = None):
    """Roll out each named controller on every seed.

    Returns ``(rows, summary, curves)``: one row per rollout, mean/std per
    controller, and per-step mean/std tracking-error curves.
    """
    if not controllers:
        raise ValueError("need at least one controller")
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    rows, summary, curves = [], {}, {}
    for name, ctrl in controllers.items():
        per_seed = []
        for s in seeds:
            tr = rollout(env, ctrl, scenario, seed=s, horizon=horizon)
            m = metrics(tr)
            rows.append({"controller": name, "seed": s,
                         "cumulative_reward": m["cumulative_reward"],
                         "mean_error": m["mean_error"], "final_error": m["final_error"],
                         "tail_mean_error": m["tail_mean_error"], "failed": tr.aborted})
            per_seed.append(m)
        ok = [m for m in per_seed if not m["aborted"]]
        rew = np.array([m["cumulative_reward"] for m in ok])
        err = np.array([m["mean_error"] for m in ok])
        summary[name] = {
            "reward_mean": float(rew.mean()) if ok else float("nan"),
            "reward_std": float(rew.std()) if ok else float("nan"),
            "error_mean": float(err.mean()) if ok else float("nan"),
            "error_std": float(err.std()) if ok else float("nan"),
            "failed": len(per_seed) - len(ok),
        }
        if ok:
            E = np.stack([m["tracking_error"] for m in ok])
            curves[name] = (E.mean(axis=0), E.std(axis=0))
    return rows, summary, curves


def write_compare_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COMPARE_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})

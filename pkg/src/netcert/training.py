"""Three-phase training: controller imitation, Lyapunov warm-up, joint minimization."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .certificates import (BundleView, CertificateBundle, network_values, neighbor_max,
                           node_alpha, node_gain_k, numpy_view, policy_values, tape_view)
from .diffcore import AdamState, Tape, adam_step
from .diffcore import tape as ad
from .environments import EnvironmentModel
from .evaluation.baselines import make_baseline
from .rng import named_rng

# (alpha, eps_A, eps_B, mu_goal, mu_A, mu_B, mu_ctrl) per environment kind
DEFAULT_WEIGHTS = {
    "platoon": (1.0, 1.0, 1.0, 100.0, 0.1, 50.0, 0.001),
    "drone": (0.2, 1.0, 1.0, 100.0, 0.01, 3.0, 0.2),
    "microgrid": (0.5, 1.0, 1.0, 10.0, 0.1, 50.0, 0.0),
}

GRAD_MODES = ("analytic", "onestep")


class TrainingDivergence(FloatingPointError):
    pass


class TrainConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    alpha: float = 1.0
    eps_A: float = 1.0
    eps_B: float = 1.0
    mu_goal: float = 100.0
    mu_A: float = 0.1
    mu_B: float = 50.0
    mu_ctrl: float = 0.001
    batch_size: int = 512
    pretrain_ctrl_iters: int = 500
    pretrain_lyap_iters: int = 500
    joint_iters: int = 2000
    lr_V: float = 3e-4
    lr_pi: float = 5e-4
    lr_k: float = 1e-3
    weight_decay: float = 1e-3
    grad_mode: str = "analytic"
    seed: int = 0
    hidden: list = field(default_factory=lambda: [64, 64])
    spectral_norm: bool = True
    power_iters: int = 1
    checkpoint_every: int = 0

    def __post_init__(self):
        self.grad_mode = str(self.grad_mode).lower()
        self.hidden = [int(h) for h in self.hidden]
        self.validate()

    def validate(self) -> None:
        for name in ("mu_goal", "mu_A", "mu_B", "mu_ctrl", "eps_A", "eps_B", "weight_decay"):
            if getattr(self, name) < 0:
                raise TrainConfigError(f"{name} must be non-negative")
        for name in ("lr_V", "lr_pi", "lr_k", "alpha"):
            if getattr(self, name) <= 0:
                raise TrainConfigError(f"{name} must be positive")
        if self.batch_size < 1:
            raise TrainConfigError("batch_size must be >= 1")
        for name in ("pretrain_ctrl_iters", "pretrain_lyap_iters", "joint_iters",
                     "checkpoint_every"):
            if getattr(self, name) < 0:
                raise TrainConfigError(f"{name} must be >= 0")
        if self.grad_mode not in GRAD_MODES:
            raise TrainConfigError(f"grad_mode must be one of {GRAD_MODES}")
        if self.power_iters < 1:
            raise TrainConfigError("power_iters must be >= 1")

    @classmethod
    def for_env(cls, kind: str, **overrides) -> "TrainConfig":
        if kind not in DEFAULT_WEIGHTS:
            raise TrainConfigError(f"no default hyperparameters for {kind!r}")
        a, eA, eB, mg, mA, mB, mc = DEFAULT_WEIGHTS[kind]
        base = dict(alpha=a, eps_A=eA, eps_B=eB, mu_goal=mg, mu_A=mA, mu_B=mB, mu_ctrl=mc)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: dict, kind: str | None = None) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise TrainConfigError(f"unknown training fields: {sorted(unknown)}")
        return cls.for_env(kind, **d) if kind is not None else cls(**d)

    @property
    def total_iters(self) -> int:
        return self.pretrain_ctrl_iters + self.pretrain_lyap_iters + self.joint_iters

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossBreakdown:
    goal_loss: float
    loss_A: float
    loss_B: float
    ctrl_loss: float
    total: float
    per_group: dict = field(default_factory=dict)

    def weighted_total(self, cfg: TrainConfig) -> float:
        return (cfg.mu_goal * self.goal_loss + cfg.mu_A * self.loss_A + cfg.mu_B * self.loss_B
                + cfg.mu_ctrl * self.ctrl_loss)


# -- individual loss terms ----------------------------------------------------------
# Each term is averaged over the batch for every node and then summed over nodes.


def _node_sum_of_means(per_sample):
    """(B, n) -> scalar: mean over the batch, summed over nodes."""
    return ad.sum(ad.mean(per_sample, axis=0))


def loss_goal(bundle: CertificateBundle, goal_batch, env=None, view=None):
    goal_batch = np.asarray(goal_batch, dtype=np.float64)
    if goal_batch.ndim == 2:
        goal_batch = goal_batch[None]
    if goal_batch.shape[0] == 0:
        raise ValueError("empty goal batch")
    V = network_values(bundle, env, goal_batch, view=view)["V"]
    return _node_sum_of_means(ad.absolute(V))


def hinge_A(bundle: CertificateBundle, V, eps_A, view: BundleView | None = None):
    view = numpy_view(bundle) if view is None else view
    chi = ad.sigmoid(node_gain_k(bundle, view)) * neighbor_max(bundle, V)
    return ad.relu(V - chi + eps_A)


def hinge_B(V, lie, alpha, eps_B):
    return ad.relu(lie + alpha * V + eps_B)


def loss_A(bundle, state_batch, eps_A, env=None, view=None):
    V = network_values(bundle, env, state_batch, view=view)["V"]
    return _node_sum_of_means(hinge_A(bundle, V, eps_A, view))


def loss_B(bundle, env, state_batch, beta, eps_B, grad_mode="analytic", alpha=None,
           view=None):
    out = network_values(bundle, env, state_batch, beta, view=view, lie=grad_mode)
    a = node_alpha(bundle) if alpha is None else alpha
    return _node_sum_of_means(hinge_B(out["V"], out["lie"], a, eps_B))


def _ctrl_sq(U_blocks, nominal, bundle, B):
    total = 0.0
    for g, Ug in U_blocks.items():
        idx = bundle.members(g)
        target = nominal[:, idx, :].reshape(B * idx.size, -1)
        diff = Ug - target
        total = total + ad.sum(diff * diff) / B
    return total


def loss_ctrl(bundle, state_batch, nominal, view=None):
    X = np.asarray(state_batch, dtype=np.float64)
    X = X[None] if X.ndim == 2 else X
    nominal = np.asarray(nominal, dtype=np.float64).reshape(X.shape[0], X.shape[1], -1)
    U = _policy_blocks(bundle, X, view)
    return _ctrl_sq(U, nominal, bundle, X.shape[0])


def _policy_blocks(bundle, X, view):
    view = numpy_view(bundle) if view is None else view
    B, n, d = X.shape
    Z = X - bundle.goal_offset
    out = {}
    for g in bundle.groups:
        idx = bundle.members(g)
        if idx.size:
            out[g] = policy_values(bundle.policies[g], Z[:, idx, :].reshape(B * idx.size, d),
                                   view.pi_arrays[g])
    return out


# -- combined evaluation -------------------------------------------------------------


@dataclass
class Batch:
    X: np.ndarray
    beta: np.ndarray
    goal: np.ndarray
    nominal: np.ndarray


def draw_batch(env: EnvironmentModel, size: int, rng, nominal_ctrl) -> Batch:
    X, beta = env.sample_states(size, rng)
    goal = env.sample_goal_states(size, rng)
    # the policy cannot leave the actuation box, so neither should its target
    return Batch(X, beta, goal, env.clamp(np.asarray(nominal_ctrl(X, beta))))


def _per_group(bundle, node_vals: dict) -> dict:
    out = {}
    for g in bundle.groups:
        idx = bundle.members(g)
        out[g] = {k: float(np.sum(v[idx])) for k, v in node_vals.items()}
    return out


def compute_losses(bundle: CertificateBundle, env: EnvironmentModel, cfg: TrainConfig,
                   batch: Batch, view: BundleView | None = None, terms=("goal", "A", "B", "ctrl"),
                   weights=None):
    """Weighted objective over the requested terms.

    Returns ``(total, parts)`` where ``total`` is a scalar (tape variable when
    ``view`` holds leaves) and ``parts`` maps term names to per-node arrays.
    """
    view = numpy_view(bundle) if view is None else view
    w = {"goal": cfg.mu_goal, "A": cfg.mu_A, "B": cfg.mu_B, "ctrl": cfg.mu_ctrl}
    if weights:
        w.update(weights)
    total = 0.0
    parts = {}
    B = batch.X.shape[0]
    if "goal" in terms:
        Vg = network_values(bundle, env, batch.goal, view=view)["V"]
        per = ad.mean(ad.absolute(Vg), axis=0)
        parts["goal"] = per
        total = total + w["goal"] * ad.sum(per)
    need_lie = "B" in terms
    if "A" in terms or need_lie:
        out = network_values(bundle, env, batch.X, batch.beta, view=view,
                             lie=cfg.grad_mode if need_lie else None)
        V = out["V"]
        if "A" in terms:
            per = ad.mean(hinge_A(bundle, V, cfg.eps_A, view), axis=0)
            parts["A"] = per
            total = total + w["A"] * ad.sum(per)
        if need_lie:
            alpha = np.full(bundle.topology.n, cfg.alpha)
            per = ad.mean(hinge_B(V, out["lie"], alpha, cfg.eps_B), axis=0)
            parts["B"] = per
            total = total + w["B"] * ad.sum(per)
        U = out["U"]
    else:
        U = _policy_blocks(bundle, batch.X, view)
    if "ctrl" in terms:
        per_node = []
        for g, Ug in U.items():
            idx = bundle.members(g)
            diff = Ug - batch.nominal[:, idx, :].reshape(B * idx.size, -1)
            per_node.append((idx, ad.mean(ad.reshape(ad.sum(diff * diff, axis=1),
                                                     (B, idx.size)), axis=0)))
        order = np.concatenate([i for i, _ in per_node])
        per = ad.take(ad.concat([p for _, p in per_node], axis=0), np.argsort(order))
        parts["ctrl"] = per
        total = total + w["ctrl"] * ad.sum(per)
    return total, parts


def breakdown(total, parts, bundle) -> LossBreakdown:
    vals = {k: np.asarray(ad.value_of(v), dtype=np.float64) for k, v in parts.items()}
    s = {k: float(np.sum(vals[k])) if k in vals else 0.0 for k in ("goal", "A", "B", "ctrl")}
    return LossBreakdown(s["goal"], s["A"], s["B"], s["ctrl"], float(ad.value_of(total)),
                         _per_group(bundle, vals))


def _check_finite(parts, bundle):
    for name, per in parts.items():
        vals = np.asarray(ad.value_of(per))
        bad = np.flatnonzero(~np.isfinite(vals))
        if bad.size:
            raise TrainingDivergence(f"non-finite loss term {name} at node {int(bad[0])}")


# -- optimization -------------------------------------------------------------------


class Trainer:
    """Holds the bundle, optimizer states and RNG stream for one training run."""

    PHASES = ("controller", "lyapunov", "joint")

    def __init__(self, env: EnvironmentModel, cfg: TrainConfig,
                 bundle: CertificateBundle | None = None):
        from .certificates import new_bundle
        self.env = env
        self.cfg = cfg
        self.bundle = bundle if bundle is not None else new_bundle(
            env, hidden=cfg.hidden, seed=cfg.seed, spectral_norm=cfg.spectral_norm,
            alpha=cfg.alpha)
        for c in self.bundle.certificates.values():
            c.alpha = cfg.alpha
        self.rng = named_rng(cfg.seed, "train/batch")
        self.nominal = make_baseline(env)
        self.history: list[dict] = []
        b = self.bundle
        self.opt = {
            "V": {g: AdamState.for_params(b.certificates[g].arrays(), learning_rate=cfg.lr_V,
                                          weight_decay=cfg.weight_decay) for g in b.groups},
            "pi": {g: AdamState.for_params(b.policies[g].net.arrays(), learning_rate=cfg.lr_pi,
                                           weight_decay=cfg.weight_decay) for g in b.groups},
            "k": {g: AdamState.for_params([np.zeros(())], learning_rate=cfg.lr_k)
                  for g in b.groups},
        }
        self.iteration = 0

    def step(self, phase: str) -> LossBreakdown:
        cfg, b = self.cfg, self.bundle
        if phase == "controller":
            terms, train = ("ctrl",), dict(train_v=False, train_pi=True, train_k=False)
        elif phase == "lyapunov":
            terms, train = ("goal", "B"), dict(train_v=True, train_pi=False, train_k=False)
        elif phase == "joint":
            # zero-weight terms are not evaluated (they are recorded as 0)
            w = {"goal": cfg.mu_goal, "A": cfg.mu_A, "B": cfg.mu_B, "ctrl": cfg.mu_ctrl}
            terms = tuple(t for t in ("goal", "A", "B", "ctrl") if w[t] > 0)
            train = dict(train_v=True, train_pi="B" in terms or "ctrl" in terms,
                         train_k="A" in terms)
        else:
            raise ValueError(f"unknown phase {phase!r}")
        b.refresh_spectral(cfg.power_iters)
        batch = draw_batch(self.env, cfg.batch_size, self.rng, self.nominal)
        tape = Tape()
        view, leaves = tape_view(b, tape, **train)
        weights = {"ctrl": 1.0} if phase == "controller" else None
        total, parts = compute_losses(b, self.env, cfg, batch, view, terms, weights)
        _check_finite(parts, b)
        if not np.isfinite(ad.value_of(total)):
            raise TrainingDivergence(f"non-finite total loss in phase {phase}")
        if ad.is_var(total):
            tape.backward(total)
            self._apply(leaves)
        lb = breakdown(total, parts, b)
        self.history.append({"iteration": self.iteration, "phase": phase,
                             "goal": lb.goal_loss, "A": lb.loss_A, "B": lb.loss_B,
                             "ctrl": lb.ctrl_loss, "total": lb.total})
        self.iteration += 1
        return lb

    def _apply(self, leaves) -> None:
        b = self.bundle
        for g, ls in leaves["V"].items():
            grads = [np.zeros_like(v.value) if v.grad is None else v.grad for v in ls]
            names = [f"V[group {g}].{i}" for i in range(len(ls))]
            self.opt["V"][g], new = adam_step(self.opt["V"][g], b.certificates[g].arrays(),
                                              grads, names)
            b.certificates[g].set_arrays(new)
        for g, ls in leaves["pi"].items():
            grads = [np.zeros_like(v.value) if v.grad is None else v.grad for v in ls]
            names = [f"pi[group {g}].{i}" for i in range(len(ls))]
            self.opt["pi"][g], new = adam_step(self.opt["pi"][g], b.policies[g].net.arrays(),
                                               grads, names)
            b.policies[g].net.set_arrays(new)
        for g, ls in leaves["k"].items():
            grad = np.zeros(()) if ls[0].grad is None else ls[0].grad
            self.opt["k"][g], new = adam_step(self.opt["k"][g],
                                              [np.asarray(b.certificates[g].gain_k)],
                                              [grad], [f"k[group {g}]"])
            b.certificates[g].gain_k = float(new[0])

    def run_phase(self, phase: str, iters: int, callback=None) -> None:
        for _ in range(iters):
            self.step(phase)
            if callback is not None:
                callback(self)

    def fit(self, callback=None) -> CertificateBundle:
        cfg = self.cfg
        self.run_phase("controller", cfg.pretrain_ctrl_iters, callback)
        self.run_phase("lyapunov", cfg.pretrain_lyap_iters, callback)
        self.run_phase("joint", cfg.joint_iters, callback)
        return self.bundle


def pretrain_controller(cfg: TrainConfig, bundle: CertificateBundle, env: EnvironmentModel,
                        trainer: Trainer | None = None) -> CertificateBundle:
    tr = trainer or Trainer(env, cfg, bundle)
    tr.run_phase("controller", cfg.pretrain_ctrl_iters)
    return tr.bundle


def pretrain_lyapunov(cfg: TrainConfig, bundle: CertificateBundle, env: EnvironmentModel,
                      trainer: Trainer | None = None) -> CertificateBundle:
    tr = trainer or Trainer(env, cfg, bundle)
    tr.run_phase("lyapunov", cfg.pretrain_lyap_iters)
    return tr.bundle


def train_joint(cfg: TrainConfig, bundle: CertificateBundle, env: EnvironmentModel,
                trainer: Trainer | None = None, callback=None):
    tr = trainer or Trainer(env, cfg, bundle)

    def cb(t):
        if cfg.checkpoint_every and callback is not None and \
                (t.iteration % cfg.checkpoint_every == 0):
            callback(t)

    tr.run_phase("joint", cfg.joint_iters, cb)
    if callback is not None:
        callback(tr)
    return tr.bundle, tr.history


def train(env: EnvironmentModel, cfg: TrainConfig, callback=None):
    """All three phases from a fresh bundle; returns ``(bundle, history)``."""
    tr = Trainer(env, cfg)
    pretrain_controller(cfg, tr.bundle, env, tr)
    pretrain_lyapunov(cfg, tr.bundle, env, tr)
    bundle, history = train_joint(cfg, tr.bundle, env, tr, callback)
    return bundle, history


HISTORY_COLUMNS = ["iteration", "goal", "A", "B", "ctrl", "total", "phase"]


def write_history_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})

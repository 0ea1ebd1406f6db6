"""scikit-learn style wrapper around the training pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .certificates import bundle_controls, bundle_v
from .environments import EnvironmentModel, make_env
from .training import TrainConfig, train
from .verification import classify_states


def check_network_states(X, env: EnvironmentModel) -> np.ndarray:
    """Validate a batch of network states; returns a float64 (B, n, d) array."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != (env.n, env.state_dim):
        raise ValueError(f"expected states of shape (B, {env.n}, {env.state_dim}), "
                         f"got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("states contain NaN or infinity")
    return X


class NetworkCertificateLearner(BaseEstimator):
    """Jointly learns decentralized controllers and ISS certificates.

    ``fit`` draws its own training states from ``env``; ``predict`` maps
    network states to controls and ``decision_function`` to per-node V.
    Unset loss weights fall back to the per-environment defaults.
    """

    def __init__(self, env="platoon", hidden=(64, 64), batch_size=512, pretrain_ctrl_iters=500,
                 pretrain_lyap_iters=500, joint_iters=2000, grad_mode="analytic", seed=0,
                 alpha=None, mu_goal=None, mu_A=None, mu_B=None, mu_ctrl=None):
        self.env = env
        self.hidden = hidden
        self.batch_size = batch_size
        self.pretrain_ctrl_iters = pretrain_ctrl_iters
        self.pretrain_lyap_iters = pretrain_lyap_iters
        self.joint_iters = joint_iters
        self.grad_mode = grad_mode
        self.seed = seed
        self.alpha = alpha
        self.mu_goal = mu_goal
        self.mu_A = mu_A
        self.mu_B = mu_B
        self.mu_ctrl = mu_ctrl

    def _make_env(self) -> EnvironmentModel:
        if isinstance(self.env, EnvironmentModel):
            return self.env
        cfg = {"kind": self.env} if isinstance(self.env, str) else self.env
        return make_env(cfg)

    def _train_config(self, kind) -> TrainConfig:
        over = {k: getattr(self, k) for k in ("alpha", "mu_goal", "mu_A", "mu_B", "mu_ctrl")
                if getattr(self, k) is not None}
        return TrainConfig.for_env(
            kind, batch_size=self.batch_size, pretrain_ctrl_iters=self.pretrain_ctrl_iters,
            pretrain_lyap_iters=self.pretrain_lyap_iters, joint_iters=self.joint_iters,
            grad_mode=self.grad_mode, seed=self.seed, hidden=list(self.hidden), **over)

    def fit(self, X=None, y=None):
        env = self._make_env()
        cfg = self._train_config(env.kind)
        self.env_ = env
        self.config_ = cfg
        self.bundle_, self.history_ = train(env, cfg)
        self.n_nodes_ = env.n
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "bundle_")
        return bundle_controls(self.bundle_, check_network_states(X, self.env_))

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "bundle_")
        return bundle_v(self.bundle_, check_network_states(X, self.env_))

    def score(self, X, y=None, beta=None) -> float:
        """Fraction of (state, node) pairs where the implication condition holds."""
        check_is_fitted(self, "bundle_")
        X = check_network_states(X, self.env_)
        if beta is None:
            beta = np.repeat(self.env_.uncertainty_vertices[:1], X.shape[0], axis=0)
        _, viol, _, _ = classify_states(self.bundle_, self.env_, X, beta)
        return float(1.0 - viol.mean())

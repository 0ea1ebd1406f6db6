from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class AdamState:
    learning_rate: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")

    @classmethod
    def for_params(cls, params, **kwargs) -> "AdamState":
        state = cls(**kwargs)
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
        return state


def adam_step(state: AdamState, params, grads, names=None):
    """One bias-corrected Adam step with decoupled weight decay.

    Decay is applied first (``p <- p * (1 - lr * wd)``), then the Adam delta.
    Returns ``(state, new_params)``; the inputs are not mutated.
    """
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    for i, (p, g) in enumerate(zip(params, grads)):
        if np.shape(p) != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} != parameter shape {np.shape(p)}")
        if not np.all(np.isfinite(g)):
            label = names[i] if names is not None else f"block {i}"
            raise NonFiniteGradient(f"non-finite gradient in parameter {label}")

    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    lr = state.learning_rate
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        p = p * (1.0 - lr * state.weight_decay) if state.weight_decay else p
        p = p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m.append(m)
        new_v.append(v)
        new_p.append(p)
    state.first_moment, state.second_moment = new_m, new_v
    state.step_count = t
    return state, new_p

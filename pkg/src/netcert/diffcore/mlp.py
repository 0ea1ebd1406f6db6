from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import tape as ad
from .tape import Tape

SIGMA_TOL = 1e-12


class ConfigurationError(ValueError):
    pass


@dataclass
class MlpParams:
    """Weights of a fully connected network.

    ``weights[l]`` has shape ``(widths[l+1], widths[l])``. Layers ``0..L-2``
    feed the hidden activation and may carry spectral normalization; the last
    layer feeds ``output_activation``.
    """

    layer_widths: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "tanh"
    output_activation: str | None = None
    spectral_norm: list[bool] = field(default_factory=list)
    power_u: list[np.ndarray] = field(default_factory=list)
    power_v: list[np.ndarray] = field(default_factory=list)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order (W0, b0, W1, b1, ...)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def set_arrays(self, arrays) -> None:
        arrays = list(arrays)
        self.weights = arrays[0::2]
        self.biases = arrays[1::2]

    def copy(self) -> "MlpParams":
        return copy.deepcopy(self)


def mlp_init(layer_widths, hidden_activation="tanh", output_activation=None, seed=0,
             spectral_norm=False) -> MlpParams:
    """Uniform fan-in initialization; biases start at zero."""
    widths = [int(w) for w in layer_widths]
    if len(widths) < 2:
        raise ConfigurationError("need at least input and output widths")
    if any(w < 1 for w in widths):
        raise ConfigurationError(f"widths must be positive, got {widths}")
    if hidden_activation != "tanh":
        raise ConfigurationError(f"unsupported hidden activation {hidden_activation!r}")
    if output_activation not in (None, "relu"):
        raise ConfigurationError(f"unsupported output activation {output_activation!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    n_hidden = len(weights) - 1
    flags = [bool(spectral_norm)] * n_hidden
    us, vs = [], []
    for W in weights[:n_hidden]:
        u = rng.standard_normal(W.shape[0])
        v = rng.standard_normal(W.shape[1])
        us.append(u / np.linalg.norm(u))
        vs.append(v / np.linalg.norm(v))
    params = MlpParams(widths, weights, biases, hidden_activation, output_activation,
                       flags, us, vs)
    if spectral_norm:
        # a random (u, v) pair gives a meaningless sigma on the first forward pass
        power_iterate(params, 20)
    return params


def power_iterate(params: MlpParams, n_iters: int = 1) -> None:
    """Refine the stored singular-vector estimates in place."""
    if n_iters < 1:
        raise ValueError("n_power_iters must be >= 1")
    for layer, flagged in enumerate(params.spectral_norm):
        if not flagged:
            continue
        W = params.weights[layer]
        u, v = params.power_u[layer], params.power_v[layer]
        for _ in range(n_iters):
            wv = W.T @ u
            nv = np.linalg.norm(wv)
            if nv < SIGMA_TOL:
                break
            v = wv / nv
            wu = W @ v
            nu = np.linalg.norm(wu)
            if nu < SIGMA_TOL:
                break
            u = wu / nu
        params.power_u[layer], params.power_v[layer] = u, v


def sigma_estimate(params: MlpParams, layer: int, W=None):
    W = params.weights[layer] if W is None else W
    outer = np.outer(params.power_u[layer], params.power_v[layer])
    return ad.sum(W * outer)


def spectral_normalize(params: MlpParams, n_power_iters: int = 20) -> MlpParams:
    """Return a copy whose flagged layers are divided by their top singular value.

    The stored power-iteration vectors of the copy are refreshed. A layer whose
    estimate falls below ``SIGMA_TOL`` (e.g. an all-zero matrix) is left alone.
    """
    out = params.copy()
    power_iterate(out, n_power_iters)
    for layer, flagged in enumerate(out.spectral_norm):
        if not flagged:
            continue
        sigma = float(sigma_estimate(out, layer))
        if abs(sigma) > SIGMA_TOL:
            out.weights[layer] = out.weights[layer] / sigma
    return out


def _effective_weight(params: MlpParams, layer: int, W):
    if layer < len(params.spectral_norm) and params.spectral_norm[layer]:
        sigma = sigma_estimate(params, layer, W)
        if abs(float(ad.value_of(sigma))) > SIGMA_TOL:
            return W / sigma
    return W


def mlp_apply(params: MlpParams, x, arrays=None, tangent=None):
    """Evaluate the network on a batch ``x`` of shape ``(N, d_in)``.

    ``arrays`` optionally overrides the weights (e.g. with tape variables in
    the order of :meth:`MlpParams.arrays`). When ``tangent`` is given the
    directional derivative of the output along it is propagated alongside and
    ``(y, dy)`` is returned. Works on plain arrays and on tape variables.
    """
    arrays = params.arrays() if arrays is None else list(arrays)
    weights, biases = arrays[0::2], arrays[1::2]
    h, dh = x, tangent
    last = len(weights) - 1
    for layer, (W, b) in enumerate(zip(weights, biases)):
        Weff = _effective_weight(params, layer, W)
        WT = ad.transpose(Weff)
        z = ad.matmul(h, WT) + b
        dz = None if dh is None else ad.matmul(dh, WT)
        if layer < last:
            h = ad.tanh(z)
            if dz is not None:
                dh = (1.0 - h * h) * dz
        else:
            if params.output_activation == "relu":
                mask = (ad.value_of(z) > 0).astype(np.float64)
                h = ad.relu(z)
                dh = None if dz is None else dz * mask
            else:
                h, dh = z, dz
    return h if tangent is None else (h, dh)


def _check_input(params: MlpParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.layer_widths[0]:
        raise ValueError(
            f"input has {x.shape[-1]} features, network expects {params.layer_widths[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite network input")
    return x


def mlp_forward(params: MlpParams, x):
    """Forward pass recorded on a fresh tape; returns ``(y, tape)``.

    ``x`` may be a single vector or a batch of row vectors; ``y`` matches.
    """
    x = _check_input(params, x)
    single = x.ndim == 1
    tape = Tape()
    xs = tape.leaf(x[None, :] if single else x, name="input")
    leaves = [tape.leaf(a, name=f"param{i}") for i, a in enumerate(params.arrays())]
    y = mlp_apply(params, xs, leaves)
    tape.watched["output"] = y
    tape.watched["single"] = single
    tape.watched["params"] = leaves
    return (y.value[0] if single else y.value), tape


@dataclass
class MlpGrads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out


def backprop(tape: Tape, upstream):
    """Reverse pass over a tape produced by :func:`mlp_forward`.

    Returns ``(MlpGrads, grad_input)``.
    """
    y = tape.watched["output"]
    upstream = np.asarray(upstream, dtype=np.float64)
    if tape.watched["single"]:
        upstream = upstream[None, :] if upstream.ndim == 1 else upstream
    tape.backward(y, upstream)
    leaves = tape.watched["params"]
    grads = [np.zeros_like(v.value) if v.grad is None else v.grad for v in leaves]
    x = tape.watched["input"]
    gx = np.zeros_like(x.value) if x.grad is None else x.grad
    if tape.watched["single"]:
        gx = gx[0]
    return MlpGrads(grads[0::2], grads[1::2]), gx

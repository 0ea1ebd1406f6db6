"""Versioned JSON checkpoints. Floats are written with ``repr`` precision, so a
save/load/save cycle reproduces the file byte for byte.
"""

from __future__ import annotations

import json

import numpy as np

from .certificates import CertificateBundle, DecentralizedPolicy, IssCertificate
from .diffcore import MlpParams
from .environments import NetworkTopology

FORMAT_VERSION = 1
EXPORT_POWER_ITERS = 20


class CheckpointError(ValueError):
    pass


def _arr(a) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": a.reshape(-1).tolist()}


def _unarr(d) -> np.ndarray:
    return np.asarray(d["data"], dtype=np.float64).reshape(d["shape"])


def mlp_to_dict(p: MlpParams) -> dict:
    return {
        "layer_widths": list(p.layer_widths),
        "hidden_activation": p.hidden_activation,
        "output_activation": p.output_activation,
        "spectral_norm": [bool(f) for f in p.spectral_norm],
        "weights": [_arr(w) for w in p.weights],
        "biases": [_arr(b) for b in p.biases],
        "power_u": [_arr(u) for u in p.power_u],
        "power_v": [_arr(v) for v in p.power_v],
    }


def mlp_from_dict(d: dict) -> MlpParams:
    return MlpParams(
        layer_widths=[int(w) for w in d["layer_widths"]],
        weights=[_unarr(w) for w in d["weights"]],
        biases=[_unarr(b) for b in d["biases"]],
        hidden_activation=d["hidden_activation"],
        output_activation=d["output_activation"],
        spectral_norm=[bool(f) for f in d["spectral_norm"]],
        power_u=[_unarr(u) for u in d["power_u"]],
        power_v=[_unarr(v) for v in d["power_v"]],
    )


def bundle_to_dict(bundle: CertificateBundle) -> dict:
    groups = {}
    for g in bundle.groups:
        c, p = bundle.certificates[g], bundle.policies[g]
        groups[str(g)] = {
            "certificate": {"S": _arr(c.S), "p_net": mlp_to_dict(c.p_net),
                            "q_net": mlp_to_dict(c.q_net), "gain_k": float(c.gain_k),
                            "alpha": float(c.alpha), "residual": _arr(c.residual)},
            "policy": {"net": mlp_to_dict(p.net), "low": _arr(p.low), "high": _arr(p.high)},
        }
    return {"kind": bundle.kind, "topology": bundle.topology.to_dict(), "groups": groups,
            "goal_offset": _arr(bundle.goal_offset), "meta": bundle.meta}


def bundle_from_dict(d: dict) -> CertificateBundle:
    t = d["topology"]
    topo = NetworkTopology(int(t["n"]), [list(s) for s in t["neighbors"]],
                           [int(g) for g in t["share_group"]], [int(x) for x in t["state_dims"]],
                           [int(x) for x in t["control_dims"]], tuple(t.get("slot_names", ())))
    certs, pols = {}, {}
    for key, gd in d["groups"].items():
        g = int(key)
        c = gd["certificate"]
        certs[g] = IssCertificate(_unarr(c["S"]), mlp_from_dict(c["p_net"]),
                                  mlp_from_dict(c["q_net"]), float(c["gain_k"]),
                                  float(c["alpha"]), _unarr(c["residual"]))
        p = gd["policy"]
        pols[g] = DecentralizedPolicy(mlp_from_dict(p["net"]), _unarr(p["low"]), _unarr(p["high"]))
    return CertificateBundle(d["kind"], topo, certs, pols, _unarr(d["goal_offset"]),
                             d.get("meta", {}))


def finalize_for_export(bundle: CertificateBundle) -> None:
    """Tighten the stored spectral-norm estimates before writing a checkpoint."""
    bundle.refresh_spectral(EXPORT_POWER_ITERS)


def checkpoint_dict(bundle, env_config, train_config=None, history=None, seed=None) -> dict:
    summary = None
    if history:
        first, last = history[0], history[-1]
        summary = {"iterations": len(history), "first": first, "last": last}
    return {
        "format_version": FORMAT_VERSION,
        "env": env_config,
        "bundle": bundle_to_dict(bundle),
        "train_config": train_config,
        "history_summary": summary,
        "seed": seed,
    }


def dumps(ckpt: dict) -> str:
    return json.dumps(ckpt, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


def save_checkpoint(path, bundle, env_config, train_config=None, history=None, seed=None):
    ckpt = checkpoint_dict(bundle, env_config, train_config, history, seed)
    with open(path, "w") as fh:
        fh.write(dumps(ckpt))
    return ckpt


def load_checkpoint(path):
    """Return ``(bundle, checkpoint_dict)``; rejects other format versions."""
    try:
        with open(path) as fh:
            ckpt = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a JSON checkpoint ({exc})") from exc
    version = ckpt.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version!r} is not supported "
                              f"(expected {FORMAT_VERSION})")
    try:
        bundle = bundle_from_dict(ckpt["bundle"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc!r})") from exc
    return bundle, ckpt

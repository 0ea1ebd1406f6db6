"""Environment construction from JSON-style config dictionaries."""

from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np

from .base import (Box, EnvConfigError, EnvironmentModel, NetworkState, NetworkTopology,
                   RolloutAbort, Scenario, step_euler)
from .drone import DroneEnv, drone_derivative, drone_topology
from .microgrid import (MicrogridEnv, MicrogridNode, balance_references, microgrid_derivative,
                        microgrid_topology)
from .platoon import PlatoonEnv, platoon_derivative, platoon_topology

KINDS = ("platoon", "drone", "microgrid")

_HALF_PI = float(np.pi / 2)

DEFAULTS = {
    "platoon": {
        "n": 5,
        "share_groups": "ends_middle",
        "dt": 0.01,
        "horizon": 500,
        "train_box": {"low": [0.0, 0.0, 0.0], "high": [2.0, 2.0, 4.0]},
        "test_init_box": {"low": [0.6, 0.6, 1.0], "high": [1.4, 1.4, 1.2]},
        "actuation_bounds": {"low": [-5.0], "high": [5.0]},
        "uncertainty_vertices": [[1.0], [3.0]],
        "scenario": {"profile": "sin_accel", "initial": [2.0], "amplitude": 1.0,
                     "frequency": 5.0, "offset": 0.0},
        "reward_constant": 10.0,
        "alpha": 1.0,
    },
    "drone": {
        "rows": 2,
        "cols": 2,
        "dt": 0.03,
        "horizon": 500,
        "physics": {"mass": 1.0, "inertia": 0.01, "arm": 0.25, "gravity": 9.81},
        "train_box": {"low": [0, 0, 0, 0, -_HALF_PI, -7, -5, -_HALF_PI],
                      "high": [5, 5, 5, 5, _HALF_PI, 7, 5, _HALF_PI]},
        "test_init_box": {"low": [0.8, 0.8, 0.09, 0.09, -0.05, 0.85, -0.15, -0.05],
                          "high": [1.2, 1.2, 0.11, 0.11, 0.05, 1.15, 0.15, 0.05]},
        "actuation_bounds": {"low": [0.0, 0.0], "high": [9.81, 9.81]},
        "uncertainty_vertices": [[0.5, 0.0], [1.5, 0.0]],
        "scenario": {"profile": "sin_accel", "initial": [1.0, 0.0], "amplitude": 0.5,
                     "frequency": 1.0, "offset": -0.25, "min_velocity": 0.5},
        "reward_constant": 100.0,
        "alpha": 0.2,
    },
    "microgrid": {
        "n": 5,
        "share_groups": "single",
        "dt": 0.01,
        "horizon": 500,
        "train_box": {"low": [-3.0, -3.0], "high": [3.0, 3.0]},
        "test_init_box": {"low": [-2.0, -3.0], "high": [2.0, 3.0]},
        "actuation_bounds": {"low": [-5.0, -5.0], "high": [5.0, 5.0]},
        "uncertainty_vertices": [[]],
        "scenario": {"profile": "constant", "initial": []},
        "reward_constant": 10.0,
        "alpha": 0.5,
    },
}


def default_microgrid_physics(n: int) -> dict:
    """Synthetic ring-with-chords grid whose reference point is an equilibrium."""
    edges = [(i, (i + 1) % n, 1.0, 0.1) for i in range(n)] if n > 2 else \
        ([(0, 1, 1.0, 0.1)] if n == 2 else [])
    if n >= 5:
        edges += [(0, 2, 0.5, 0.05), (1, 3, 0.5, 0.05)]
    nodes = [MicrogridNode(G=0.1, B=0.1) for _ in range(n)]
    balance_references(nodes, edges)
    return {"nodes": [vars(nd) for nd in nodes], "edges": [list(e) for e in edges]}


def resolve_config(config: dict) -> dict:
    """Fill in per-kind defaults; explicit entries always win."""
    if not isinstance(config, dict):
        raise EnvConfigError("environment config must be a JSON object")
    kind = config.get("kind")
    if kind not in KINDS:
        raise EnvConfigError(f"unknown environment kind {kind!r}; expected one of {KINDS}")
    unknown = set(config) - set(DEFAULTS[kind]) - {"kind", "n", "seed", "physics"}
    if unknown:
        raise EnvConfigError(f"unknown {kind} config keys: {sorted(unknown)}")
    out = copy.deepcopy(DEFAULTS[kind])
    for key, val in config.items():
        if key == "physics" and isinstance(val, dict) and "physics" in out:
            out["physics"].update(copy.deepcopy(val))
        else:
            out[key] = copy.deepcopy(val)
    out["kind"] = kind
    if kind == "drone" and "actuation_bounds" not in config:
        p = out["physics"]
        mg = p["mass"] * p["gravity"]
        out["actuation_bounds"] = {"low": [0.0, 0.0], "high": [mg, mg]}
    if kind == "microgrid" and "physics" not in out:
        out["physics"] = default_microgrid_physics(int(out["n"]))
    return out


def make_env(config) -> EnvironmentModel:
    """Build an environment from a config dict or a JSON file path."""
    if isinstance(config, (str, Path)):
        config = load_json(config)
    if isinstance(config, dict) and "env" in config:
        config = config["env"]
    cfg = resolve_config(config)
    kind = cfg["kind"]
    try:
        if kind == "platoon":
            topo = platoon_topology(int(cfg["n"]), cfg.get("share_groups", "ends_middle"))
            cls = PlatoonEnv
        elif kind == "drone":
            topo = drone_topology(int(cfg["rows"]), int(cfg["cols"]))
            cfg["n"] = topo.n
            cls = DroneEnv
        else:
            n = int(cfg["n"])
            edges = [tuple(e) for e in cfg["physics"]["edges"]]
            topo = microgrid_topology(n, edges, cfg.get("share_groups", "single"))
            cls = MicrogridEnv
        sc = dict(cfg["scenario"])
        profile = sc.pop("profile")
        init_box = Box(**cfg["test_init_box"])
        return cls(
            topology=topo,
            dt=float(cfg["dt"]),
            horizon=int(cfg["horizon"]),
            train_box=Box(**cfg["train_box"]),
            test_init_box=init_box,
            actuation_bounds=Box(**cfg["actuation_bounds"]),
            uncertainty_vertices=np.asarray(cfg["uncertainty_vertices"], dtype=np.float64),
            scenario=Scenario(profile, sc, init_box, int(cfg.get("seed", 0))),
            reward_constant=float(cfg["reward_constant"]),
            alpha=float(cfg["alpha"]),
            config=cfg,
        )
    except (KeyError, TypeError) as exc:
        raise EnvConfigError(f"malformed {kind} config: {exc!r}") from exc


CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def bundled_configs() -> list[str]:
    return sorted(p.stem for p in CONFIG_DIR.glob("*.json"))


def load_json(path) -> dict:
    """Load a JSON file; a bare name such as ``platoon5`` picks a bundled config."""
    path = Path(path)
    if not path.exists() and path.suffix == "" and (CONFIG_DIR / f"{path}.json").exists():
        path = CONFIG_DIR / f"{path}.json"
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise EnvConfigError(f"{path}: invalid JSON ({exc})") from exc


def resized_config(env: EnvironmentModel, n=None, rows=None, cols=None) -> dict:
    """Config of the same kind with a different network size."""
    cfg = copy.deepcopy(env.config)
    if env.kind == "drone":
        side = None if n is None else int(round(np.sqrt(n)))
        if n is not None and side * side != n:
            raise EnvConfigError(f"drone grid size {n} is not a perfect square")
        cfg["rows"] = rows if rows is not None else side
        cfg["cols"] = cols if cols is not None else side
        cfg.pop("n", None)
    else:
        cfg["n"] = int(n)
        if env.kind == "microgrid":
            cfg["physics"] = default_microgrid_physics(int(n))
    return cfg


__all__ = [
    "Box", "DroneEnv", "EnvConfigError", "EnvironmentModel", "KINDS", "MicrogridEnv",
    "MicrogridNode", "NetworkState", "NetworkTopology", "PlatoonEnv", "RolloutAbort",
    "Scenario", "balance_references", "bundled_configs", "CONFIG_DIR", "default_microgrid_physics", "drone_derivative",
    "drone_topology", "load_json", "make_env", "microgrid_derivative", "microgrid_topology",
    "platoon_derivative", "platoon_topology", "resized_config", "resolve_config", "step_euler",
]

"""Command-line entry point: train, verify, port, eval, compare."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .certificates import PortError, port_certificate, validate_bundle_for_env
from .checkpoint import (CheckpointError, finalize_for_export, load_checkpoint,
                         save_checkpoint)
from .diffcore import ConfigurationError, NonFiniteGradient
from .environments import EnvConfigError, load_json, make_env, resized_config, resolve_config
from .evaluation import (CareError, PolicyController, compare, make_baseline, metrics,
                         rollout, write_compare_csv, write_trace_csv)
from .training import TrainConfig, TrainConfigError, TrainingDivergence, train, \
    write_history_csv
from .verification import check_certificate, check_robust_vertices


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def load_experiment(path) -> tuple[dict, dict]:
    """A config file is either an env config or ``{"env": ..., "train": ...}``."""
    raw = load_json(path)
    if not isinstance(raw, dict):
        raise EnvConfigError(f"{path}: config must be a JSON object")
    if "env" in raw:
        env_cfg, train_cfg = raw["env"], raw.get("train", {})
    else:
        env_cfg, train_cfg = raw, {}
    return resolve_config(env_cfg), dict(train_cfg)


def _env_from(args, ckpt=None):
    if args.config:
        env_cfg, _ = load_experiment(args.config)
        if ckpt is not None and ckpt["env"].get("kind") != env_cfg["kind"]:
            raise EnvConfigError(f"config kind {env_cfg['kind']!r} does not match checkpoint "
                                 f"kind {ckpt['env'].get('kind')!r}")
    elif ckpt is not None:
        env_cfg = ckpt["env"]
    else:
        raise UsageError("--config is required")
    return make_env(env_cfg)


def _history_path(out: Path) -> Path:
    return out.with_name(out.stem + ".history.csv")


def cmd_train(args) -> dict:
    env_cfg, train_cfg = load_experiment(args.config)
    if args.seed is not None:
        train_cfg["seed"] = args.seed
    cfg = TrainConfig.from_dict(train_cfg, kind=env_cfg["kind"])
    env = make_env(env_cfg)
    out = Path(args.out)

    def on_checkpoint(tr):
        save_checkpoint(out, tr.bundle, env.config, cfg.to_dict(), tr.history, cfg.seed)

    bundle, history = train(env, cfg, on_checkpoint if cfg.checkpoint_every else None)
    finalize_for_export(bundle)
    save_checkpoint(out, bundle, env.config, cfg.to_dict(), history, cfg.seed)
    write_history_csv(_history_path(out), history)
    return {"checkpoint": str(out), "history": str(_history_path(out)),
            "final": history[-1] if history else None}


def cmd_verify(args) -> dict:
    bundle, ckpt = load_checkpoint(args.checkpoint)
    env = _env_from(args, ckpt)
    validate_bundle_for_env(bundle, env)
    seed = 0 if args.seed is None else args.seed
    rep = check_certificate(bundle, env, n_samples=args.samples, m_A=args.margin_a,
                            m_B=args.margin_b, seed=seed)
    out = rep.to_dict()
    if args.robust:
        out["robust"] = check_robust_vertices(bundle, env, n_samples=args.samples, seed=seed)
    if args.out:
        Path(args.out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    print(rep.summary(), file=sys.stderr)
    return {"report": args.out, "implication_violation_rate": rep.implication_violation_rate,
            "goal_zero_mean": rep.goal_zero_mean}


def cmd_port(args) -> dict:
    bundle, ckpt = load_checkpoint(args.checkpoint)
    src_env = _env_from(args, ckpt)
    validate_bundle_for_env(bundle, src_env)
    if args.target_n is None:
        raise UsageError("--target-n is required")
    tgt_env = make_env(resized_config(src_env, n=args.target_n))
    ported = port_certificate(bundle, src_env, tgt_env)
    save_checkpoint(args.out, ported, tgt_env.config, ckpt.get("train_config"), None,
                    ckpt.get("seed"))
    return {"checkpoint": args.out, "n": tgt_env.n,
            "groups": sorted(set(ported.topology.share_group))}


def _controllers(args, bundle, env):
    ctrls = {}
    if bundle is not None:
        ctrls["learned"] = PolicyController(bundle)
    if args.baseline or bundle is None:
        name = args.baseline or ("droop" if env.kind == "microgrid" else "lqr")
        ctrls[name] = make_baseline(env, name)
    return ctrls


def cmd_eval(args) -> dict:
    bundle = None
    ckpt = None
    if args.checkpoint:
        bundle, ckpt = load_checkpoint(args.checkpoint)
    env = _env_from(args, ckpt)
    if bundle is not None:
        validate_bundle_for_env(bundle, env)
    if args.baseline:
        ctrl, name = make_baseline(env, args.baseline), args.baseline
    elif bundle is not None:
        ctrl, name = PolicyController(bundle), "learned"
    else:
        raise UsageError("eval needs --checkpoint or --baseline")
    seed = 0 if args.seed is None else args.seed
    trace = rollout(env, ctrl, seed=seed, bundle=bundle)
    m = metrics(trace)
    if args.out:
        write_trace_csv(args.out, trace)
    return {"controller": name, "trace": args.out,
            **{k: v for k, v in m.items() if k != "tracking_error"}}


def cmd_compare(args) -> dict:
    bundle = None
    ckpt = None
    if args.checkpoint:
        bundle, ckpt = load_checkpoint(args.checkpoint)
    env = _env_from(args, ckpt)
    if bundle is not None:
        validate_bundle_for_env(bundle, env)
    seeds = args.seeds if args.seeds else ([args.seed] if args.seed is not None else [0, 1, 2, 3])
    rows, summary, _ = compare(env, _controllers(args, bundle, env), seeds)
    if args.out:
        write_compare_csv(args.out, rows)
    return {"comparison": args.out, "summary": summary}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="netcert", description=__doc__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("--config")
    common.add_argument("--checkpoint")
    common.add_argument("--out")
    common.add_argument("--seed", type=int)

    t = sub.add_parser("train", parents=[common], help="train a certificate bundle")
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("verify", parents=[common], help="sample-based certificate check")
    v.add_argument("--samples", type=int, default=100000)
    v.add_argument("--margin-a", type=float, default=0.0)
    v.add_argument("--margin-b", type=float, default=0.0)
    v.add_argument("--robust", action="store_true", help="also check every uncertainty vertex")
    v.set_defaults(func=cmd_verify)

    po = sub.add_parser("port", parents=[common], help="port a bundle to a larger network")
    po.add_argument("--target-n", type=int)
    po.set_defaults(func=cmd_port)

    e = sub.add_parser("eval", parents=[common], help="one closed-loop rollout")
    e.add_argument("--baseline", choices=["lqr", "droop", "nominal"])
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", parents=[common], help="learned vs baseline over seeds")
    c.add_argument("--baseline", choices=["lqr", "droop", "nominal"])
    c.add_argument("--seeds", type=int, nargs="+")
    c.set_defaults(func=cmd_compare)
    return p


_ERRORS = (UsageError, EnvConfigError, CheckpointError, TrainConfigError, TrainingDivergence,
           PortError, CareError, ConfigurationError, NonFiniteGradient, FileNotFoundError,
           ValueError)


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: train, verify, port, eval, compare")
        if args.command in ("train",) and not args.config:
            raise UsageError("--config is required")
        if args.command in ("train", "port") and not args.out:
            raise UsageError("--out is required")
        if args.command in ("verify", "port") and not args.checkpoint:
            raise UsageError("--checkpoint is required")
        result = args.func(args)
    except _ERRORS as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    print(json.dumps(result, default=_json_default, sort_keys=True))
    return 0


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()

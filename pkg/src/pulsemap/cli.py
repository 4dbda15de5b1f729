"""Command-line entry points: train, landscape, baseline, analyze, verify.

Exit codes: 0 success, 1 validation error (bad config/arguments), 2 runtime
fault. Outputs land under --out-dir only; inputs are never mutated.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, baseline_nm, persist, rl_core, verify
from .config import ConfigError, RunConfig, load_config


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise ConfigError(f"--grid must look like 11x11, got {text!r}")


def _grid_spec(args, env) -> analysis.GridSpec:
    nt, npk = _parse_grid(args.grid)
    t_lo, t_hi = env.theta_range()
    return analysis.GridSpec(nt, npk, theta_min=t_lo, theta_max=t_hi)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.episodes is not None:
        cfg.episodes = args.episodes
        cfg.validate()
    out_dir = Path(args.out_dir or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curve = persist.CurveWriter(out_dir / "curve.csv")
    ckpt_path = out_dir / "checkpoint.json"

    def on_checkpoint(state, ep):
        persist.save_checkpoint(state, cfg, ckpt_path)

    state = None
    if args.resume:
        state, ckpt_cfg = persist.load_checkpoint(args.resume)
        cfg = ckpt_cfg
        if args.episodes is not None:
            cfg.episodes = args.episodes
            cfg.validate()
    try:
        state = rl_core.train(cfg, state=state, on_bin=curve, on_checkpoint=on_checkpoint)
    finally:
        curve.close()
    persist.write_sidecar(out_dir / "curve.csv", cfg.config_hash(), cfg.seed)
    print(f"trained {state.episodes_done} episodes -> {ckpt_path}")
    return 0


def cmd_landscape(args) -> int:
    state, cfg = persist.load_checkpoint(args.checkpoint)
    env = rl_core.make_env(cfg)
    spec = _grid_spec(args, env)
    grid = analysis.evaluate_landscape(state.policy, env, spec, workers=args.workers)
    grid.meta["config_hash"] = cfg.config_hash()
    out_dir = Path(args.out_dir or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    persist.write_landscape_csv(grid, out_dir / "landscape.csv")
    persist.write_landscape_json(grid, out_dir / "landscape.json")
    gradient = analysis.protocol_gradient(grid, periodic_phi=cfg.target_encoding == "periodic")
    persist.write_gradient_csv(grid, gradient, out_dir / "gradient.csv")
    matrix = analysis.distance_matrix(grid)
    persist.write_matrix_csv(matrix, out_dir / "distance_matrix.csv", grid.cell_angles())
    for name in ("landscape.csv", "gradient.csv", "distance_matrix.csv"):
        persist.write_sidecar(out_dir / name, cfg.config_hash(), cfg.seed)
    print(f"landscape {args.grid}: mean F = {grid.fidelity.mean():.4f} -> {out_dir}")
    return 0


def cmd_baseline(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    env = rl_core.make_env(cfg)
    spec = _grid_spec(args, env)
    grid = baseline_nm.grid_baseline(
        env, spec, restarts=args.restarts, max_iter=args.max_iter,
        early_stop_F=args.early_stop, seed=cfg.seed, workers=args.workers,
    )
    grid.meta["config_hash"] = cfg.config_hash()
    out_dir = Path(args.out_dir or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    persist.write_landscape_csv(grid, out_dir / "nm_landscape.csv")
    persist.write_landscape_json(grid, out_dir / "nm_landscape.json")
    persist.write_sidecar(out_dir / "nm_landscape.csv", cfg.config_hash(), cfg.seed,
                          extra={"episodes_used": grid.meta["episodes_used"]})
    print(
        f"baseline {args.grid}: mean F = {grid.fidelity.mean():.4f}, "
        f"episodes = {grid.meta['episodes_used']} -> {out_dir}"
    )
    return 0


def cmd_analyze(args) -> int:
    grid_a = persist.read_landscape(args.a)
    grid_b = persist.read_landscape(args.b)
    report = {
        "a": {"path": args.a, **analysis.landscape_stats(grid_a)},
        "b": {"path": args.b, **analysis.landscape_stats(grid_b)},
    }
    sa = report["a"]["neighbor_time_scatter"]
    sb = report["b"]["neighbor_time_scatter"]
    report["scatter_ratio_b_over_a"] = sb / sa if sa > 0 else None
    for key in ("episodes_used", "source"):
        if key in grid_a.meta:
            report["a"][key] = grid_a.meta[key]
        if key in grid_b.meta:
            report["b"][key] = grid_b.meta[key]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(report, fh, indent=2, allow_nan=False)
    print(json.dumps(report, indent=2))
    return 0


def cmd_verify(args) -> int:
    return 0 if verify.run_all() else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pulsemap")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("landscape", help="evaluate a trained policy over a target grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--grid", default="21x21")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(fn=cmd_landscape)

    p = sub.add_parser("baseline", help="per-target Nelder-Mead over a grid")
    p.add_argument("--config", required=True)
    p.add_argument("--grid", default="11x11")
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--max-iter", type=int, default=20000)
    p.add_argument("--early-stop", type=float, default=0.99)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("analyze", help="compare two landscape exports")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", default="report.json")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("verify", help="run the built-in oracle suite")
    p.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return 1 if err.code not in (0, None) else 0
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # runtime faults: integration, NaN halt, bad data
        print(f"runtime fault: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

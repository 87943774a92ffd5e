"""Command-line interface for phantom generation, forward solves,
single inversions, and noise sweeps."""

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .elasticity import MaterialField, lame_from_moduli, solve_displacement
from .harness import (FULL, MU_ONLY, ExperimentConfig, config_from_toml,
                      emit_report, run_noise_free_suite, run_noise_sweep,
                      synthesize)
from .imaging import write_pgm
from .optimize import NMOptions


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML experiment config")
    p.add_argument("--preset", choices=["single", "four"],
                   help="phantom preset")
    p.add_argument("--mode", choices=[MU_ONLY, FULL],
                   help="invert mu only (lambda frozen at truth) or both")
    p.add_argument("--grid", nargs=2, type=int, metavar=("NX", "NY"),
                   help="working pixel grid")
    p.add_argument("--paper-grid", action="store_true",
                   help="use the 508x216 grid")
    p.add_argument("--noise", type=str,
                   help="comma-separated noise levels, e.g. 0.01,0.02")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--iters", type=int, help="Nelder-Mead iteration budget")
    p.add_argument("--out", type=Path, default=Path("out"),
                   help="output directory")


def _resolve(args) -> ExperimentConfig:
    cfg = config_from_toml(args.config) if args.config else ExperimentConfig()
    updates = {}
    if args.preset:
        updates["preset"] = args.preset
    if args.mode:
        updates["mode"] = args.mode
    if args.grid:
        updates["nx"], updates["ny"] = args.grid
    if args.paper_grid:
        if args.grid:
            raise SystemExit("--grid and --paper-grid are mutually exclusive")
        updates["nx"], updates["ny"] = 508, 216
    if args.noise is not None:
        updates["noise_levels"] = tuple(
            float(tok) for tok in args.noise.split(",") if tok)
    if args.seed is not None:
        updates["master_seed"] = args.seed
    if args.iters is not None:
        updates["optimizer"] = replace(cfg.optimizer,
                                       max_iterations=args.iters)
    return replace(cfg, **updates) if updates else cfg


def cmd_phantom(args) -> int:
    cfg = _resolve(args)
    prob = synthesize(cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    write_pgm(prob.I1, args.out / "phantom.pgm")
    np.savetxt(args.out / "labels.csv", prob.labels, fmt="%d")
    print(f"wrote phantom.pgm and labels.csv to {args.out}")
    return 0


def cmd_forward(args) -> int:
    cfg = _resolve(args)
    prob = synthesize(cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    write_pgm(prob.I1, args.out / "phantom.pgm")
    write_pgm(prob.I2, args.out / "deformed.pgm")
    print(f"wrote phantom.pgm and deformed.pgm to {args.out}")
    return 0


def cmd_invert(args) -> int:
    cfg = _resolve(args)
    report = run_noise_free_suite(replace(cfg, noise_levels=()))
    emit_report(report, args.out)
    run = report.runs[0]
    print(f"recovered lambda: {run.lam}")
    print(f"recovered mu:     {run.mu}")
    print(f"relative errors: lam {run.err_lam:.4%}, mu {run.err_mu:.4%}, "
          f"joint {run.err_joint:.4%}")
    if run.non_identifiable:
        print("warning: data misfit did not improve; "
              "run flagged non-identifiable")
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve(args)
    if not cfg.noise_levels:
        cfg = replace(cfg, noise_levels=tuple(
            round(0.01 * k, 2) for k in range(1, 11)))
    report = run_noise_sweep(cfg)
    files = emit_report(report, args.out)
    print(f"wrote {len(files)} files to {args.out}")
    for run in report.runs:
        print(f"  {run.run_id}: joint {run.err_joint:.4%} "
              f"(best {run.best_err_joint:.4%} at it {run.best_iteration})")
    return 0


def cmd_report(args) -> int:
    summary = args.out / "summary.csv"
    if not summary.exists():
        raise SystemExit(f"no summary.csv under {args.out}")
    sys.stdout.write(summary.read_text())
    manifest = args.out / "manifest.json"
    if manifest.exists():
        doc = json.loads(manifest.read_text())
        print(f"# config: preset={doc['preset']} mode={doc['mode']} "
              f"grid={doc['nx']}x{doc['ny']} seed={doc['master_seed']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="elastinv",
        description="Quantitative elastography by intensity-based inversion")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, doc in (
            ("phantom", cmd_phantom, "generate and dump the phantom image"),
            ("forward", cmd_forward, "solve the forward model, emit images"),
            ("invert", cmd_invert, "single noise-free reconstruction"),
            ("sweep", cmd_sweep, "noise-level sweep"),
            ("report", cmd_report, "re-print CSV summary of a run")):
        p = sub.add_parser(name, help=doc)
        _add_common(p)
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())

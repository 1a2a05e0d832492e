"""Command-line entry point: ``robust-semigroup {converge,check,pde,step} --config FILE``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .errors import RobustSemigroupError
from .harness import (
    _csv_text,
    emit_profile,
    initial_function,
    load_config,
    run_checks,
    run_converge,
    solve_reference,
)
from .semigroup import DyadicSchedule, iterate

EXIT_FAIL = 1
EXIT_CONFIG = 2


def _grid_csv(g) -> str:
    x = g.spec.coordinates().reshape(-1, g.spec.dimension)
    names = ("x", "y")[: g.spec.dimension]
    rows = [(*pt, v) for pt, v in zip(x.tolist(), g.values.ravel().tolist())]
    return _csv_text((*names, "u"), rows)


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robust-semigroup", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("converge", "iterate every dyadic level and compare with the PDE solution"),
        ("check", "run the property suite"),
        ("pde", "solve the limiting PDE on the refined grid"),
        ("step", "iterate at a single level (the finest one unless --level is given)"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="experiment JSON file")
        p.add_argument("--level", type=int, help="use this single dyadic level")
        p.add_argument("--delta", type=float, help="ball radius per unit time")
        p.add_argument("--grid-n", type=int, help="points per axis")
        p.add_argument("--horizon", type=float, help="final time T")
        p.add_argument("--out", help="output directory")
        p.add_argument("--timings", action="store_true",
                       help="fill the runtime_ms column (output is then not reproducible)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(
            level=args.level, delta=args.delta, grid_n=args.grid_n, horizon=args.horizon, out=args.out
        )
        out = Path(cfg.output_dir)
        if args.command == "converge":
            report = run_converge(cfg, record_runtime=args.timings)
            path = emit_profile(report, out / "converge.csv")
            failed = [c.name for c in report.checks if not c.passed]
            print(f"converge: levels {cfg.n_min}..{cfg.n_max}, final gap to PDE {report.final_gap:.3e}, "
                  f"{'all checks pass' if not failed else 'FAILED: ' + ', '.join(failed)} -> {path}")
            return 0 if report.passed else EXIT_FAIL
        if args.command == "check":
            report = run_checks(cfg)
            path = emit_profile(report, out / "checks.csv")
            failed = [c.name for c in report.checks if not c.passed]
            print(f"check: {len(report.checks) - len(failed)}/{len(report.checks)} pass"
                  f"{'' if not failed else ' (FAILED: ' + ', '.join(failed) + ')'} -> {path}")
            return 0 if report.passed else EXIT_FAIL
        if args.command == "pde":
            u = solve_reference(cfg)
            path = out / "pde.csv"
            _write(path, _grid_csv(u))
            print(f"pde: u(T) at T={cfg.horizon:g}, sup norm {np.abs(u.values).max():.6e} -> {path}")
            return 0
        f = initial_function(cfg)
        level = cfg.n_max
        u = iterate(f, cfg.model, cfg.penalty, DyadicSchedule(level, cfg.horizon), refine=cfg.refine)
        path = out / f"step_level{level}.csv"
        _write(path, _grid_csv(u))
        print(f"step: level {level}, sup norm {np.abs(u.values).max():.6e} -> {path}")
        return 0
    except (RobustSemigroupError, ValueError, OSError) as exc:
        print(f"robust-semigroup: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: one subcommand per experiment id."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .harness import (EXIT_CONFIG, EXIT_NUMERICAL, EXPERIMENTS, ConfigError, ExperimentConfig,
                      run_experiment)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rydplasma", description=__doc__)
    sub = parser.add_subparsers(dest="experiment", metavar="EXPERIMENT")
    sub.required = True
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", type=Path, help="YAML configuration (SI units)")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out-dir", type=Path, default=None,
                       help="artifact directory (default: runs/<experiment>)")
        p.add_argument("--trajectories", type=int, help="trajectory count override")
        p.add_argument("--workers", type=int, help="worker processes")
        p.add_argument("--no-plots", action="store_true", help="skip SVG output")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_CONFIG if exc.code else 0
    try:
        if args.config is not None:
            cfg = ExperimentConfig.load(args.config)
            if cfg.experiment != args.experiment:
                raise ConfigError(f"config is for {cfg.experiment!r}, not {args.experiment!r}")
        else:
            cfg = ExperimentConfig.from_mapping({"experiment": args.experiment})
        cfg = cfg.with_overrides(seed=args.seed, n_traj=args.trajectories, workers=args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = args.out_dir or Path(cfg.output.get("dir", Path("runs") / cfg.experiment))
    result = run_experiment(cfg, out_dir, plots=not args.no_plots)
    for check in result.outcome.checks:
        print(check.line())
    for failure in result.outcome.failures:
        print(f"failure: {failure}", file=sys.stderr)
    if result.exit_code == EXIT_NUMERICAL:
        print("numerical failure; partial results kept", file=sys.stderr)
    print(f"results in {result.out_dir} ({result.wall_time:.1f} s), exit {result.exit_code}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())

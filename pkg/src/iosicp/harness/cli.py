"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, load_config, with_overrides
from .experiments import (
    ablate,
    replicate_seeds,
    run_episode,
    summarize,
    summary_text,
    sweep_distance,
    sweep_latency,
    sweep_noise,
    write_rows,
)
from .plots import CsvParseError, emit_plots, render_plots

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

SWEEPS = {
    "sweep-latency": (sweep_latency, "sweep_latency", "collaborator latency (s)"),
    "sweep-distance": (sweep_distance, "sweep_distance", "distance bucket upper edge (m)"),
    "sweep-noise": (sweep_noise, "sweep_noise", "localization noise std"),
    "ablate": (ablate, "ablation", "configuration"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI run configuration")
    common.add_argument("--seed", type=int, help="base seed")
    common.add_argument("--replicates", type=int, help="replicates per sweep point")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--no-hpha", action="store_true", help="fuse by naive mean instead of attention")
    common.add_argument("--no-selection", action="store_true", help="keep every neighbor at weight 1")

    p = argparse.ArgumentParser(prog="iosicp", description="Collaborative perception experiments on synthetic scenes.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="one batch of episodes on the configured scene set")
    for name in SWEEPS:
        sub.add_parser(name, parents=[common], help=f"{name.replace('-', ' ')} protocol")
    plot = sub.add_parser("plot", parents=[common], help="render SVG plots from a result CSV")
    plot.add_argument("csv", type=Path)
    plot.add_argument("--xlabel", default="sweep value")
    sub.add_parser("selftest", parents=[common], help="small deterministic end-to-end check")
    return p


def _config(args):
    cfg = load_config(args.config)
    return with_overrides(
        cfg,
        seed=args.seed,
        replicates=args.replicates,
        out=args.out,
        hpha_on=False if args.no_hpha else None,
        selection_on=False if args.no_selection else None,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "plot":
            out = args.out or args.csv.parent
            for path in emit_plots(args.csv, out, args.xlabel):
                print(path)
            return EXIT_OK
        cfg = _config(args)
        if args.command == "selftest":
            from .selftest import run_selftest

            if args.replicates is None:
                cfg = with_overrides(cfg, replicates=2)
            checks = run_selftest(cfg, cfg.out)
            for c in checks:
                print(c.line())
            return EXIT_OK if all(c.passed for c in checks) else EXIT_RUNTIME
        if args.command == "run":
            rows = [r for s in replicate_seeds(cfg) for r in run_episode(cfg, s)]
            path = write_rows(rows, cfg.out / "run.csv")
            print(path)
        else:
            fn, stem, xlabel = SWEEPS[args.command]
            rows = fn(cfg)
            path = write_rows(rows, cfg.out / f"{stem}.csv")
            print(path)
            for svg in render_plots(rows, cfg.out, stem, xlabel):
                print(svg)
        sys.stdout.write(summary_text(summarize(rows)))
        return EXIT_OK
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except CsvParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # anything else is a runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

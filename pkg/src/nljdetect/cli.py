"""Command line entry point ``nlj-detect``."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .harness import (
    PRESETS,
    WORKERS_ENV,
    ConfigError,
    NumericFailure,
    emit_results,
    load_spec,
    run_calibration,
    run_experiment,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("source", help="preset name or path to a YAML/JSON experiment config")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    p.add_argument("--trials-scale", type=float, default=None, help="multiply every trial count")
    p.add_argument("--out", default=None, help="output path (default: config output_path or stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nlj-detect", description="Noise-like jammer detection experiments.",
                     epilog=f"Worker processes are controlled by the {WORKERS_ENV} environment variable.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _common(sub.add_parser("run", help="run an experiment and emit its result table"))
    cal = sub.add_parser("calibrate", help="compute detection and/or ghost thresholds only")
    _common(cal)
    cal.add_argument("--what", choices=("threshold", "ghost", "both"), default="both")
    sub.add_parser("presets", help="list the built-in presets")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        for name in sorted(PRESETS, key=lambda n: (int(n[3:].split("-")[0]), n)):
            print(f"{name}\t{PRESETS[name]['experiment']}")
        return EXIT_OK
    try:
        spec = load_spec(args.source, seed=args.seed, trials_scale=args.trials_scale)
        out = args.out or spec.output_path or "-"
        if args.command == "run":
            table = run_experiment(spec)
        else:
            table = run_calibration(spec, args.what)
        emit_results(table, out, args.format)
    except ConfigError as exc:
        print(f"nlj-detect: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericFailure, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"nlj-detect: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"nlj-detect: cannot write output: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

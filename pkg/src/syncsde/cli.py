"""Command-line interface.

    syncsde run --config PATH [--seed N] [--out DIR] [--sweep key=v1,v2]
    syncsde validate --config PATH
    syncsde metrics --dir DIR
"""

from __future__ import annotations

import argparse
import sys

from .config import load_run_config, parse_scalar
from .errors import ConfigError, EngineError
from .runner import recompute_metrics, run_from_file


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="syncsde", description="Synchronized diffusion sampling engine")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a run or sweep")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None)
    run.add_argument("--sweep", default=None, metavar="KEY=V1,V2,...")

    validate = sub.add_parser("validate", help="parse and validate a config")
    validate.add_argument("--config", required=True)

    metrics = sub.add_parser("metrics", help="recompute metrics from a run directory")
    metrics.add_argument("--dir", required=True)
    return parser


def _parse_sweep(text: str) -> tuple[str, list]:
    key, sep, values = text.partition("=")
    if not sep or not key or not values:
        raise ConfigError("sweep", f"expected KEY=V1,V2,... got {text!r}")
    return key, [parse_scalar(v) for v in values.split(",")]


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            sweep = _parse_sweep(args.sweep) if args.sweep else None
            dirs = run_from_file(args.config, seed=args.seed, out=args.out, sweep=sweep)
            for d in dirs:
                print(d)
            return 0
        if args.command == "validate":
            load_run_config(args.config)
            print("ok")
            return 0
        if args.command == "metrics":
            for name, value in recompute_metrics(args.dir):
                print(f"{name},{value!r}")
            return 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 every cell failed numerically.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .experiments import (
    all_failed,
    format_csv,
    format_json,
    format_number,
    run_asymptotics,
    run_compare,
    run_estimate,
    topology_info,
)
from .network import ConvergenceError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return v


def _samples(text: str) -> int:
    v = int(text)
    if v < 100:
        raise argparse.ArgumentTypeError(f"need at least 100 samples, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adaptdetect",
        description="Error-probability asymptotics and Monte Carlo for adaptive diffusion networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="experiment config (JSON)")
    common.add_argument("--out", metavar="PATH", help="write output here instead of stdout")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--seed", type=_u64, metavar="U64", help="override the config seed")
    common.add_argument("--samples", type=_samples, metavar="N", help="override the sample budget")
    sub.add_parser("topology-info", parents=[common], help="network summary")
    sub.add_parser("asymptotics", parents=[common], help="exact-asymptotics sweep over (mu, agent)")
    sub.add_parser("estimate", parents=[common], help="sweep plus plain MC and IS estimates")
    sub.add_parser("compare", parents=[common], help="two combination rules side by side")
    return parser


def _topology_text(info: dict) -> str:
    def fmt(v):
        if isinstance(v, list):
            return "[" + ", ".join(format_number(x) for x in v) + "]"
        return format_number(v)
    return "".join(f"{k}: {fmt(v)}\n" for k, v in info.items())


def _emit(text: str, out: str | None, mirror: str | None = None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    path.write_text(text)
    if mirror is not None:
        path.with_suffix(".json").write_text(mirror)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.samples is not None:
            cfg.samples = args.samples
        if args.command == "topology-info":
            info = topology_info(cfg)
            _emit(format_json(info) if args.format == "json" else _topology_text(info), args.out)
            return EXIT_OK
        runner = {"asymptotics": run_asymptotics, "estimate": run_estimate, "compare": run_compare}[args.command]
        rows = runner(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    if args.format == "json":
        _emit(format_json(rows), args.out)
    else:
        # a CSV written to a file gets a JSON mirror next to it
        _emit(format_csv(rows), args.out, mirror=format_json(rows))
    for row in rows:
        if row.get("error"):
            print(f"mu={row['mu']} agent={row['agent']}: {row['error']}", file=sys.stderr)
    return EXIT_NUMERIC if all_failed(rows) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

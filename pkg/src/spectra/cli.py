"""Command line entry point ``spectra``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import MODES, RunConfig
from .errors import ConfigError
from .harness import EXIT_CONFIG, run


def _rho_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad rho list {text!r}") from exc


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad seed {text!r}") from exc
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spectra", description="Eigenvalue asymptotics experiments for -Laplace + V.")
    ap.add_argument("mode", choices=MODES)
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--seed", type=_u64, help="seed for the generated potential and the Monte Carlo run")
    ap.add_argument("--rho", type=_rho_list, help="comma-separated rho grid")
    ap.add_argument("--order", type=int, help="highest prediction order s")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.load(args.config).with_overrides(mode=args.mode, output=args.out, seed=args.seed,
                                                         rho_grid=args.rho, order=args.order)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code = run(cfg)
    print(f"{cfg.mode}: exit {code}, artifacts in {cfg.output}")
    return code


if __name__ == "__main__":
    sys.exit(main())

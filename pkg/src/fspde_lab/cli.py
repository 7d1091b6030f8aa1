"""Command line entry point.

Exit codes: 0 success, 1 condition-check failure, 2 input error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, parse_config
from .runner import run_experiment

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3

SUBCOMMANDS = {
    "check": ["conditions"],
    "simulate": ["simulate"],
    "couple": ["couple"],
    "harnack": ["harnack"],
    "fernique": ["fernique"],
    "contract": ["contract"],
    "concentrate": ["concentrate"],
    "invariant": ["invariant"],
    "run": None,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fspde-lab",
                                description="Delay SPDE simulation and condition checks")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {"check": "evaluate the sufficient conditions",
             "simulate": "simulate one trajectory",
             "couple": "synchronous coupling of two initial segments",
             "harnack": "change-of-measure coupling and Harnack check",
             "fernique": "supremum tail coefficients and empirical tail",
             "contract": "fit the contraction rate from coupled paths",
             "concentrate": "exponential-moment table",
             "invariant": "sample the long-run law",
             "run": "run every experiment listed in the config"}
    for name in SUBCOMMANDS:
        s = sub.add_parser(name, help=helps[name])
        s.add_argument("--config", required=True, help="YAML experiment config")
        s.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
        s.add_argument("--out", default=None, help="output directory")
        s.add_argument("--workers", type=int, default=None, help="worker threads")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed must be in [0, 2^64)")
            cfg = cfg.with_seed(args.seed)
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("--workers must be positive")
        man = run_experiment(cfg, args.out, SUBCOMMANDS[args.command], args.workers)
    except ConfigError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ArithmeticError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    for f in sorted(man.files):
        print(f)
    if man.conditions_passed is False:
        print("condition check failed", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

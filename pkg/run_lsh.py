#!/usr/bin/env python3
"""
Command-line front end for the stochastic Hamiltonian toolkit

Usage:
    python run_lsh.py stability --config experiments/canonical.json
    python run_lsh.py simulate --config experiments/canonical.json --seed 7 --out results/sim.json

Exit codes: 0 success, 2 a sufficient condition is not met, 1 any other
error, 64 unknown command or bad usage.
"""

import argparse
import logging
import os
import sys

# Add project root to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from config import config
from lsh.exceptions import LshError
from lsh.experiment import COMMANDS, EXIT_FAILURE, EXIT_USAGE, dispatch, load_config
from lsh.export import emit

logger = logging.getLogger(__name__)


class UsageParser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors, which is reserved for unmet conditions here"""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = UsageParser(
        prog='lsh',
        description="Analyse and simulate linear stochastic Hamiltonian systems"
    )

    parser.add_argument(
        "command",
        help=f"One of: {', '.join(COMMANDS)}"
    )

    parser.add_argument(
        "--config",
        required=True,
        help="Experiment configuration (JSON)"
    )

    parser.add_argument(
        "--seed",
        type=int,
        help="Seed for stochastic commands (overrides simulation.seed)"
    )

    parser.add_argument(
        "--out",
        help="Output file for the JSON envelope (default: output.path in the config, then LSH_OUTPUT_DIR for csv or stdout for json)"
    )

    parser.add_argument(
        "--log-level",
        default=None,
        help="Logging level (default: LOG_LEVEL from the environment)"
    )

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command not in COMMANDS:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"lsh: unknown command {args.command!r}; expected one of {', '.join(COMMANDS)}\n")
        return EXIT_USAGE

    config.setup_logging(args.log_level)
    try:
        config.validate_config()
        cfg = load_config(args.config, command=args.command, seed=args.seed)
        envelope = dispatch(args.command, cfg)
        emit(envelope, out=args.out or cfg.output.path, fmt=cfg.output.format)
    except (LshError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        sys.stderr.write(f"lsh {args.command}: {e}\n")
        return EXIT_FAILURE

    return envelope.exit_code


if __name__ == "__main__":
    sys.exit(main())

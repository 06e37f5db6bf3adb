"""
dirac-loc - Main Entry Point
Numerical experiments on random Dirac and Schrödinger operators on a strip
"""

import argparse
import logging
import sys

from config import COMMANDS, LOG_LEVEL, PROG_NAME
from handlers.runner import run

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG_NAME,
        description="Lyapunov spectra, Lie algebras, spectra and Green kernels of random quasi-1D operators",
    )
    parser.add_argument("command", choices=COMMANDS, help="Experiment to run")
    parser.add_argument("--config", required=True, metavar="PATH", help="key=value or JSON experiment config")
    parser.add_argument("--seed", type=int, default=None, help="Overrides the seed key of the config")
    parser.add_argument("--out", default=None, metavar="DIR", help="Output directory (default: DIRACLOC_OUTPUT_DIR)")
    return parser


def main(argv=None) -> int:
    """Parse arguments and run one experiment."""
    logging.basicConfig(
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        level=getattr(logging, LOG_LEVEL.upper(), logging.INFO)
    )
    args = build_parser().parse_args(argv)
    logger.debug(f"Arguments: {vars(args)}")
    return run(args.command, args.config, seed=args.seed, out=args.out)


if __name__ == "__main__":
    sys.exit(main())

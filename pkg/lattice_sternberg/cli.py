# lattice_sternberg/cli.py
"""
Command-line entry point: `lattice-sternberg run <config>` runs the pipeline
stages and exits with the code of the first failing error family.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from lattice_sternberg import settings
from lattice_sternberg.adapters.tensor_io import write_report
from lattice_sternberg.config import STAGES, load_config
from lattice_sternberg.errors import ConfigError
from lattice_sternberg.pipeline import run_pipeline

logger = logging.getLogger("lattice_sternberg.cli")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lattice-sternberg",
        description="Decay-preserving normal forms and linearizations of lattice maps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run pipeline stages for one experiment config")
    run.add_argument("config", type=Path, help="experiment config (JSON)")
    run.add_argument("--stage", action="append", choices=STAGES, dest="stages",
                     help="stage to run; repeat for several (default: all)")
    run.add_argument("--out-dir", type=Path, default=Path(settings.OUT_DIR))
    run.add_argument("--seed-override", type=int, default=None)
    run.add_argument("--window-scale", type=int, default=1, help="multiply every window radius by k")
    run.add_argument("--log-level", default=settings.LOG_LEVEL,
                     choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format=settings.LOG_FORMAT)

    try:
        if args.window_scale < 1:
            raise ConfigError(f"--window-scale must be >= 1, got {args.window_scale}",
                              {"window_scale": args.window_scale})
        config = load_config(args.config)
    except ConfigError as err:
        logger.error("config rejected: %s", err.detail)
        write_report(args.out_dir / "report_config.json", {"stage": "config", "status": "error", **err.to_dict()})
        return err.exit_code

    code = run_pipeline(config, args.stages, args.out_dir, args.seed_override, args.window_scale)
    logger.info("finished %s with exit code %d", config.name, code)
    return code


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""
Multiscale solver for nonlinear high-contrast elliptic problems
Entry point for the command line
"""

import argparse
import logging
import os
import sys

from dotenv import load_dotenv

from console_interface import ConsoleInterface
from errors import InvalidConfigurationError
from multiscale_study import MultiscaleStudy
from run_config import apply_env_overrides, parse_config


def build_parser():
    parser = argparse.ArgumentParser(description="GMsFEM solves and enrichment studies")
    parser.add_argument("command", choices=MultiscaleStudy.COMMANDS)
    parser.add_argument("config", help="JSON run configuration")
    parser.add_argument("--output-dir", default=None, help="override the configured output directory")
    parser.add_argument("--quiet", action="store_true", help="only report errors")
    return parser


def main(argv=None):
    """Main entry point"""
    load_dotenv()
    logging.basicConfig(
        level=os.getenv("GMSFEM_LOG_LEVEL", "WARNING").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)

    try:
        config = apply_env_overrides(parse_config(args.config), args.output_dir)
    except InvalidConfigurationError as e:
        print(f"invalid configuration: {e}", file=sys.stderr)
        return 2

    study = MultiscaleStudy(config, show_progress=not args.quiet)
    console = ConsoleInterface(study, quiet=args.quiet)
    return console.run(args.command)


if __name__ == "__main__":
    sys.exit(main())

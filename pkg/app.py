# ChargeCast - Main command-line entry point

import os
import sys
import logging
import argparse
from typing import List, Optional

import torch
from dotenv import load_dotenv

from cli.commands import register_commands

load_dotenv()

# Configure logging
logging.basicConfig(
    level=os.environ.get('LOG_LEVEL', 'INFO').upper(),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    """Command-line parser with every pipeline command registered"""
    parser = argparse.ArgumentParser(
        prog="chargecast",
        description="Citywide EV charging occupancy forecasting: prepare, cluster, train, evaluate, ablate",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    register_commands(subparsers)
    return parser


def initialize_runtime():
    """Initialize process-wide numeric settings"""
    threads = int(os.environ.get('CHARGECAST_THREADS', '1'))
    torch.set_num_threads(threads)
    logger.debug(f"torch intra-op threads: {threads}")


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    initialize_runtime()
    return args.handler(args)


if __name__ == '__main__':
    sys.exit(main())

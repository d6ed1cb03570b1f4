# Shared command plumbing: flags, run config resolution and the run.json echo

import argparse
import logging
from functools import wraps
from pathlib import Path
from typing import Callable, Optional

from cli.middleware import EXIT_INPUT, report_error, setup_middleware
from core.config import DatasetDescriptor, RunConfig, load_descriptor, load_run_config
from core.storage.bundles import BundleStore

logger = logging.getLogger(__name__)

RUN_FILE = "run.json"
CHECKPOINT_DIR = "checkpoints"
BEST_CHECKPOINT = "best.ckpt"
LAST_CHECKPOINT = "last.ckpt"

Command = Callable[[RunConfig], int]


def add_run_flags(parser: argparse.ArgumentParser) -> argparse.ArgumentParser:
    parser.add_argument("--config", help="Run config (TOML, or a run.json echo)")
    parser.add_argument("--seed", type=int, help="Seed of every stochastic component")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--clusters", type=int, help="Number of area clusters (hyperedges)")
    parser.add_argument("--variant", help="Architecture variant")
    parser.add_argument("--sweep", help="Cluster-count sweep lo..hi")
    parser.add_argument("--resume", action="store_true", default=None, help="Continue from the last checkpoint")
    return parser


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then flags"""
    config = load_run_config(
        args.config,
        seed=args.seed,
        out=args.out,
        clusters=args.clusters,
        sweep=args.sweep,
        resume=args.resume,
    )
    values = config.model_dump()
    if args.variant:
        values["model"] = {**config.model, "variant": args.variant}
        values["variants"] = (args.variant,)
    if config.dataset:
        values["dataset"] = str(Path(config.dataset).resolve())
    return RunConfig(**values)


def echo_run_config(config: RunConfig) -> Path:
    """Write the effective config before any work"""
    path = config.out_dir / RUN_FILE
    BundleStore.write_json(path, config.model_dump(mode="json"))
    logger.info(f"Effective run config written to {path}")
    return path


def read_descriptor(config: RunConfig) -> Optional[DatasetDescriptor]:
    if not config.dataset:
        return None
    return load_descriptor(config.dataset)


def checkpoint_path(config: RunConfig, name: str = BEST_CHECKPOINT) -> Path:
    return config.out_dir / CHECKPOINT_DIR / name


def fail(message: str, code: int = EXIT_INPUT) -> int:
    report_error(message)
    return code


def command(cmd: Command):
    """Adapt cmd(config) to an argparse handler wrapped in middleware"""
    @wraps(cmd)
    def handler(args: argparse.Namespace) -> int:
        config = resolve_run_config(args)
        echo_run_config(config)
        return cmd(config)
    return setup_middleware(handler)

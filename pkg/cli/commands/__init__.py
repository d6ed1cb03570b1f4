# Commands initialization

import argparse
import logging

from . import data_commands, model_commands, region_commands

logger = logging.getLogger(__name__)


def register_commands(subparsers: argparse._SubParsersAction):
    """Register all pipeline commands"""
    logger.debug("Registering commands...")

    # prepare, synth
    data_commands.register(subparsers)

    # cluster
    region_commands.register(subparsers)

    # train, evaluate, ablate, tune
    model_commands.register(subparsers)

    logger.debug("Command registration complete")
    return subparsers

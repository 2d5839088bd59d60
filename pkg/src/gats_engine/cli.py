# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Command line entry point for the GATS engine.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from gats_engine.components.transformer import ComponentModel
from gats_engine.config.settings import RunConfig, apply_overrides, get_run_params, resolve_run_config
from gats_engine.core.exceptions import GatsException, MissingArgumentsException
from gats_engine.core.metrics import MetricsWriter
from gats_engine.models.component_models import ComponentSpec
from gats_engine.presets.components import build_components, load_components
from gats_engine.tools.harness import initialize_harness_commands
from gats_engine.tools.inspection import initialize_inspection_commands
from gats_engine.tools.training import initialize_training_commands

logger = logging.getLogger(__name__)


class EngineService:
    """
    Resolved configuration, randomness and output locations of one command.

    Parameters
    ----------
    config : RunConfig
        Validated run configuration, command line overrides applied
    command : str
        Subcommand name; names the default checkpoint and metrics files
    """

    def __init__(self, config: RunConfig, command: str):
        self.config = config
        self.command = command
        self.out_dir = Path(config.paths.out_dir).expanduser()
        self.rng = np.random.default_rng(config.seed)

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "EngineService":
        overrides = {
            "seed": args.seed,
            "steps": args.steps,
            "lambda": getattr(args, "lambda"),
            "out": args.out,
            "force_zero_gates": args.force_zero_gates,
            "freeze": args.freeze,
            "no_steer": args.no_steer,
        }
        config = apply_overrides(resolve_run_config(args.config, args.preset), overrides)
        return cls(config, args.command)

    def checkpoint_path(self) -> Path:
        if self.config.paths.checkpoint:
            return Path(self.config.paths.checkpoint).expanduser()
        return self.out_dir / f"{self.command}.ckpt"

    def metrics_path(self) -> Path:
        if self.config.paths.metrics:
            return Path(self.config.paths.metrics).expanduser()
        return self.out_dir / f"{self.command}.metrics.jsonl"

    def metrics(self) -> MetricsWriter:
        return MetricsWriter(self.metrics_path())

    def components(self, specs: Sequence[ComponentSpec], pretrained: Sequence[str] = ()) -> Dict[str, ComponentModel]:
        """Fresh models for ``specs``; ``pretrained`` ones are restored from ``paths.components`` when set."""
        models = build_components(self.config, specs, self.rng)
        if self.config.paths.components and pretrained:
            load_components(Path(self.config.paths.components).expanduser(), {n: models[n] for n in pretrained})
        elif pretrained:
            logger.warning(f"No pretrained components configured; {', '.join(pretrained)} start untrained")
        return models


def add_run_arguments(parser: argparse.ArgumentParser) -> None:
    """Flags shared by every subcommand."""
    for value in get_run_params().values():
        parser.add_argument(*value[:-2], required=False, default=value[-2], help=value[-1])
    parser.add_argument(
        "--freeze", nargs="+", default=None, metavar="MODALITY", help="Freeze these component models."
    )
    parser.add_argument(
        "--no-steer", nargs="+", default=None, metavar="MODALITY", help="Remove these modalities from the steered set."
    )
    parser.add_argument(
        "--force-zero-gates", action="store_true", help="Debug: every GATS gate is exactly 0."
    )


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command line arguments."""
    parser = argparse.ArgumentParser(prog="gats-engine", description="Gather-Attend-Scatter multimodal engine")
    common = argparse.ArgumentParser(add_help=False)
    add_run_arguments(common)
    subparsers = parser.add_subparsers(dest="command", required=True)

    initialize_training_commands(subparsers, common)
    initialize_harness_commands(subparsers, common)
    initialize_inspection_commands(subparsers, common)
    return parser.parse_args(argv)


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    args = parse_arguments(argv)
    configure_logging(args.log_level)
    try:
        service = EngineService.from_args(args)
        logger.info(f"Running '{args.command}' with preset '{service.config.preset}', seed {service.config.seed}")
        return int(args.handler(service, args) or 0)
    except GatsException as e:
        logger.debug("Command failed", exc_info=True)
        print(e.one_line(), file=sys.stderr)
        return 2
    except MissingArgumentsException as e:
        print(f"error[config]: missing {', '.join(e.missing)}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.error(f"Unexpected error in '{args.command}': {e}", exc_info=True)
        print(f"error[internal]: {' '.join(str(e).split())}", file=sys.stderr)
        return 1

# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Agent harness commands: gen-data and evaluate.
"""

import argparse
import logging
from pathlib import Path

from gats_engine.core.checkpoint import load_checkpoint, restore_module
from gats_engine.harness.dataset import generate_dataset
from gats_engine.harness.evaluate import evaluate
from gats_engine.presets.agent import build_agent_preset
from gats_engine.prompts.command_prompts import evaluate_prompt, gen_data_prompt
from gats_engine.resources.reports import evaluation_table
from gats_engine.tools.training import AGENT_PRESETS, env_for, preset_specs
from gats_engine.utils.validators import validate_existing_file, validate_preset

logger = logging.getLogger(__name__)


def run_gen_data(service, args: argparse.Namespace) -> int:
    config = service.config
    path = Path(config.paths.dataset).expanduser() if config.paths.dataset else service.out_dir / "episodes.gatsdata"
    generate_dataset(path, config.harness.episodes, config.seed, env_for(config))
    print(f"dataset: {path} ({config.harness.episodes} episodes)")
    return 0


def run_evaluate(service, args: argparse.Namespace) -> int:
    config = service.config
    validate_preset(config, AGENT_PRESETS, "evaluate")
    source = args.checkpoint or config.paths.checkpoint or str(service.out_dir / "train-agent.ckpt")
    path = validate_existing_file(source, "agent checkpoint (--checkpoint or paths.checkpoint)")

    preset = build_agent_preset(config, service.rng, service.components(preset_specs(config)))
    restore_module(preset.bundle, load_checkpoint(path))
    report = evaluate(preset, env_for(config), config.harness.eval_episodes, config.guidance.lambda_, seed=config.seed)
    print(evaluation_table(report, per_template=not args.summary))
    return 0


def initialize_harness_commands(subparsers, common: argparse.ArgumentParser) -> None:
    """Register the dataset and evaluation subcommands."""
    gen = subparsers.add_parser("gen-data", parents=[common], help=gen_data_prompt.splitlines()[0], description=gen_data_prompt)
    gen.set_defaults(handler=run_gen_data)

    ev = subparsers.add_parser("evaluate", parents=[common], help=evaluate_prompt.splitlines()[0], description=evaluate_prompt)
    ev.add_argument("--checkpoint", default=None, help="Trained agent checkpoint; defaults to <out>/train-agent.ckpt.")
    ev.add_argument("--summary", action="store_true", help="Omit the per-template table.")
    ev.set_defaults(handler=run_evaluate)

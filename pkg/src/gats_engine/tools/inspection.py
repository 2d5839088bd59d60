# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Inspection commands: inspect-plan, equivalence-check and plot.
"""

import argparse
import logging
from pathlib import Path
from typing import List, Tuple

from gats_engine.config.settings import RunConfig
from gats_engine.gats.composer import build_plan
from gats_engine.presets.equivalence import equivalence_check
from gats_engine.prompts.command_prompts import equivalence_check_prompt, inspect_plan_prompt, plot_prompt
from gats_engine.resources.plots import plot_metrics
from gats_engine.resources.reports import plan_table
from gats_engine.utils.validators import validate_existing_file

logger = logging.getLogger(__name__)

EQUIVALENCE_TOLERANCE = 1e-8


def plan_columns(config: RunConfig) -> Tuple[int, List[Tuple[str, int]]]:
    """``(K, [(model-backed modality, depth), ...])`` of the configured preset."""
    layers = {name: section.num_layers for name, section in config.components.items()}
    if config.preset == "cross_attention":
        return config.gats.num_layers or max(1, layers["language"] // 2), [("language", layers["language"])]
    names = ["language", "vision"]
    if config.preset in ("agent3", "agent3_twoview"):
        names.append("action")
        if config.preset == "agent3_twoview" or config.harness.second_view:
            names.append("view2")
    backing = {"view2": "vision"}
    return config.gats.num_layers or 2, [(n, layers[backing.get(n, n)]) for n in names]


def run_inspect_plan(service, args: argparse.Namespace) -> int:
    if args.layers:
        K = args.K or 1
        names = [f"model{i + 1}" for i in range(len(args.layers))]
        counts = list(args.layers)
    else:
        K, columns = plan_columns(service.config)
        K = args.K or K
        names = [n for n, _ in columns]
        counts = [c for _, c in columns]
    print(plan_table(build_plan(K, counts), names))
    return 0


def run_equivalence_check(service, args: argparse.Namespace) -> int:
    config = service.config
    language = config.component("language")
    report = equivalence_check(
        seeds=args.seeds,
        inputs_per_seed=args.inputs,
        num_features=config.cross_attention.num_features,
        feature_dim=config.cross_attention.feature_dim,
        vocab_size=language.vocab_size,
        width=language.embed_dim,
        num_layers=language.num_layers,
        heads=language.heads,
    )
    print(f"comparisons: {report.comparisons}")
    print(f"max_abs_deviation: {report.max_abs_deviation:.3e}")
    if report.max_abs_deviation >= EQUIVALENCE_TOLERANCE:
        logger.error(f"Deviation {report.max_abs_deviation:.3e} exceeds {EQUIVALENCE_TOLERANCE:g}")
        return 1
    return 0


def run_plot(service, args: argparse.Namespace) -> int:
    metrics = validate_existing_file(args.metrics or str(service.metrics_path()), "metrics file (--metrics)")
    output = Path(args.output) if args.output else metrics.with_suffix(".png")
    plot_metrics(metrics, output, keys=args.keys)
    print(f"plot: {output}")
    return 0


def initialize_inspection_commands(subparsers, common: argparse.ArgumentParser) -> None:
    """Register the inspection subcommands."""
    plan = subparsers.add_parser(
        "inspect-plan", parents=[common], help=inspect_plan_prompt, description=inspect_plan_prompt
    )
    plan.add_argument("--K", type=int, default=None, help="Number of GATS layers; overrides the configuration.")
    plan.add_argument("--layers", type=int, nargs="+", default=None, help="Component depths L_1 .. L_M.")
    plan.set_defaults(handler=run_inspect_plan)

    eq = subparsers.add_parser(
        "equivalence-check",
        parents=[common],
        help=equivalence_check_prompt.splitlines()[0],
        description=equivalence_check_prompt,
    )
    eq.add_argument("--seeds", type=int, default=10, help="Random weight draws.")
    eq.add_argument("--inputs", type=int, default=10, help="Random inputs per weight draw.")
    eq.set_defaults(handler=run_equivalence_check)

    plot = subparsers.add_parser("plot", parents=[common], help=plot_prompt, description=plot_prompt)
    plot.add_argument("--metrics", default=None, help="Metrics JSON-lines file.")
    plot.add_argument("--output", default=None, help="PNG path; defaults next to the metrics file.")
    plot.add_argument("--keys", nargs="+", default=["loss"], help="Series to draw.")
    plot.set_defaults(handler=run_plot)

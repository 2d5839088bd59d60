# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Plain-text renderers for command output.
"""

from typing import List, Sequence

from gats_engine.harness.env import TEMPLATES
from gats_engine.harness.evaluate import EvaluationReport, template_table
from gats_engine.models.gats_models import InterleavePlan
from gats_engine.training.bimodal import SubstitutionResult


def plan_table(plan: InterleavePlan, names: Sequence[str]) -> str:
    """
    One line per GATS layer, insertion points in model order.

    >>> print(plan_table(build_plan(2, [6, 4, 2]), ["language", "vision", "action"]))
    K=2  L=(6, 4, 2)  models: language vision action
    1: 3 2 1
    2: 5 3 1
    """
    lines = [f"K={plan.K}  L={tuple(plan.layer_counts)}  models: {' '.join(names)}"]
    for k, row in enumerate(plan.rows, start=1):
        lines.append(f"{k}: {' '.join(str(v) for v in row)}")
    return "\n".join(lines)


def evaluation_table(report: EvaluationReport, per_template: bool = True) -> str:
    lines = [f"{'lambda':>8}  {'success':>8}  {'episodes':>8}"]
    for row in report.rows:
        lines.append(f"{row.lam:>8.2f}  {row.success_rate:>8.3f}  {row.episodes:>8d}")
    if per_template and report.rows:
        lines.append("")
        header = "template".ljust(36) + "".join(f"{'l=' + format(r.lam, 'g'):>10}" for r in report.rows)
        lines.append(header)
        tables = [template_table(row) for row in report.rows]
        for i, template in enumerate(TEMPLATES):
            cells = "".join(f"{f'{t[i][1]}/{t[i][2]}':>10}" for t in tables)
            lines.append(template.describe().ljust(36) + cells)
    return "\n".join(lines)


def substitution_summary(result: SubstitutionResult) -> str:
    ratio = "n/a" if result.ratio is None else f"{result.ratio:.3f}"
    lines: List[str] = [
        f"target masked loss: {result.target:.4f}",
        f"steps to target (original):    {result.original_steps}",
        f"steps to target (substituted): {result.substituted_steps}",
        f"ratio: {ratio}",
        f"GATS parameters: {result.report.old_gats_parameters} -> {result.report.new_gats_parameters}",
        f"trainable / frozen: {result.report.trainable_parameters} / {result.report.frozen_parameters}",
    ]
    return "\n".join(lines)

# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Help text for the command line surface.
"""

pretrain_prompt = """Pretrain the component models a preset needs.
Language learns next-token prediction on instructions and captions; vision learns
masked-token prediction on grid frames (or short clips for agent presets).
Writes a components checkpoint that train-agent and train-bimodal can load."""

train_agent_prompt = """Behaviour-clone the scripted expert with a GATS agent.
Language and vision stay frozen; GATS and the action model train from scratch.
Instructions are dropped with the configured probability for guidance."""

train_bimodal_prompt = """Two-pass training of the paired text/image preset.
Each batch runs caption-first (masked image tokens) and image-first (next caption
token) through the same GATS layers."""

evaluate_prompt = """Success rate of a trained agent on held-out seeds.
Reports the unguided policy (lambda 0) and the configured lambda side by side,
with a per-template breakdown."""

gen_data_prompt = """Generate a dataset of successful expert episodes.
The same episode count and seed always produce a byte-identical file."""

inspect_plan_prompt = """Print where each GATS layer sits inside every component model."""

equivalence_check_prompt = """Compare the cross-attention preset with an independent gated
cross-attention implementation over random weights and inputs, and print the
largest absolute logit deviation."""

substitute_gats_prompt = """Train a bimodal model, replace its GATS module with a fresh one,
retrain only the new GATS and report how many steps each run needed to reach the
same masked loss."""

plot_prompt = """Draw the loss curve of a metrics file as a PNG image."""

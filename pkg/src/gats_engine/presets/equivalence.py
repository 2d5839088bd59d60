# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Compare the cross-attention preset with the hand-written adapter model.
"""

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np

from gats_engine.components.transformer import ComponentModel
from gats_engine.models.component_models import ComponentSpec
from gats_engine.presets.cross_attention import CrossAttentionPreset, build_cross_attention_preset, insertion_points
from gats_engine.presets.reference import adapter_weights, language_weights, reference_cross_attention

logger = logging.getLogger(__name__)


@dataclass
class EquivalenceReport:
    max_abs_deviation: float = 0.0
    comparisons: int = 0
    per_seed: List[float] = field(default_factory=list)


def reference_logits(preset: CrossAttentionPreset, text_tokens: np.ndarray, vision_features: np.ndarray) -> np.ndarray:
    """Logits of the reference model carrying the preset's weights."""
    state = preset.bundle.state_dict()
    spec = preset.language.spec
    language = language_weights(state, spec.num_layers, spec.heads, prefix="components.language.")
    adapters = adapter_weights(state, insertion_points(preset), preset.num_features)
    return reference_cross_attention(
        language,
        np.asarray(vision_features, dtype=np.float64).reshape(-1, preset.feature_dim),
        adapters,
        text_tokens,
        adapter_heads=preset.bundle.config.heads,
    )


def equivalence_check(
    seeds: int = 10,
    inputs_per_seed: int = 10,
    num_features: int = 4,
    feature_dim: int = 24,
    vocab_size: int = 32,
    width: int = 32,
    num_layers: int = 4,
    heads: int = 4,
    max_text: int = 8,
    gate_scale: float = 1.0,
) -> EquivalenceReport:
    """
    Maximum absolute logit deviation over random weights and inputs.

    Each seed draws a fresh language model, GATS module and gate weights; each
    input draws a text prompt and a set of vision features.
    """
    report = EquivalenceReport()
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        language = ComponentModel(
            ComponentSpec(
                name="language",
                vocab_size=vocab_size,
                embed_dim=width,
                num_layers=num_layers,
                heads=heads,
                ffw_hidden=2 * width,
                max_positions=max_text,
            ),
            rng,
        )
        preset = build_cross_attention_preset(num_features, language, feature_dim, rng, heads=heads)
        preset.randomize_gates(rng, gate_scale)
        worst = 0.0
        for _ in range(inputs_per_seed):
            text = rng.integers(vocab_size, size=int(rng.integers(1, max_text + 1)))
            features = rng.normal(size=(num_features, feature_dim))
            ours = preset.logits(text, features).data
            theirs = reference_logits(preset, text, features)
            worst = max(worst, float(np.max(np.abs(ours - theirs))))
            report.comparisons += 1
        report.per_seed.append(worst)
        report.max_abs_deviation = max(report.max_abs_deviation, worst)
    logger.info(f"Equivalence check: {report.comparisons} comparisons, max |dev| {report.max_abs_deviation:.3e}")
    return report

# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
GATS configured as a vision-to-text cross-attention adapter.

Two modalities: precomputed vision features (never steered, context length V so
every feature is always gathered) and the language model (steered, context
length 1, identity projections). Each text token therefore attends over all V
features plus itself, and only the language model's stream is written to.
"""

import logging
from typing import List, Optional

import numpy as np

from gats_engine.components.transformer import ComponentModel
from gats_engine.core import ops
from gats_engine.core.exceptions import ShapeMismatchError
from gats_engine.core.module import Module, ParameterFactory
from gats_engine.core.tensor import Tensor
from gats_engine.gats.composer import GatsBundle, JointOutput, ModalityInput, Segment, joint_forward
from gats_engine.gats.layer import GatsModule
from gats_engine.models.gats_models import GatsConfig, ModalitySpec

logger = logging.getLogger(__name__)

VISION_ID = 1
LANGUAGE_ID = 2


class CrossAttentionPreset:
    """A frozen language model steered by GATS over fixed vision features."""

    def __init__(self, bundle: GatsBundle, num_features: int, feature_dim: int):
        self.bundle = bundle
        self.num_features = num_features
        self.feature_dim = feature_dim

    @property
    def language(self) -> ComponentModel:
        return self.bundle.model_for(LANGUAGE_ID)

    @property
    def image_position(self) -> Optional[Tensor]:
        return self.bundle.extras._parameters.get("image_position")

    def inputs(self, text_tokens: np.ndarray, vision_features: np.ndarray) -> dict:
        """Vision features arrive first, then the (optionally prefixed) text."""
        features = np.asarray(vision_features, dtype=np.float64).reshape(-1, self.feature_dim)
        if features.shape[0] != self.num_features:
            raise ShapeMismatchError(
                "cross_attention", features.shape, (self.num_features, self.feature_dim), detail="vision features"
            )
        text_tokens = np.asarray(text_tokens, dtype=np.int64)
        prefix = None
        if self.image_position is not None:
            prefix = ops.reshape(self.image_position, (1, self.language.width))
        text_rows = text_tokens.size + (1 if prefix is not None else 0)
        v = self.num_features
        return {
            VISION_ID: ModalityInput.static(VISION_ID, Tensor(features), np.arange(v)),
            LANGUAGE_ID: ModalityInput(
                LANGUAGE_ID, np.arange(v, v + text_rows), (Segment(tokens=text_tokens, prefix=prefix),)
            ),
        }

    def forward(self, text_tokens: np.ndarray, vision_features: np.ndarray) -> JointOutput:
        return joint_forward(self.bundle, self.inputs(text_tokens, vision_features), outputs=[LANGUAGE_ID])

    def logits(self, text_tokens: np.ndarray, vision_features: np.ndarray) -> Tensor:
        """``(n_text, vocab)`` logits; the image-position row, if any, is dropped."""
        logits = self.forward(text_tokens, vision_features).logits[LANGUAGE_ID]
        if self.image_position is not None:
            logits = ops.take(logits, np.arange(1, logits.shape[0]))
        return logits

    def generate(self, prompt: np.ndarray, vision_features: np.ndarray, num_tokens: int) -> np.ndarray:
        """Greedy continuation of ``prompt``."""
        tokens = [int(t) for t in np.asarray(prompt, dtype=np.int64)]
        for _ in range(num_tokens):
            if len(tokens) >= self.language.spec.max_positions - 1:
                break
            logits = self.logits(np.array(tokens, dtype=np.int64), vision_features)
            tokens.append(int(np.argmax(logits.data[-1])))
        return np.array(tokens, dtype=np.int64)

    def randomize_gates(self, rng: np.random.Generator, scale: float = 1.0) -> None:
        """Draw gate weights and biases so gates sit well inside (0, 1); used by equivalence checks."""
        for layer in self.bundle.gats.layers:
            layer.param("g.language.weight").data = rng.normal(0.0, scale, size=layer.param("g.language.weight").shape)
            layer.param("g.language.bias").data = rng.normal(0.0, scale, size=(1,))


def cross_attention_config(
    num_features: int,
    feature_dim: int,
    d: int,
    num_layers: int,
    heads: int = 4,
    ffw_hidden: int = 64,
    gate_init_bias: float = -10.0,
    force_zero_gates: bool = False,
) -> GatsConfig:
    return GatsConfig(
        modalities=[
            ModalitySpec(
                modality_id=VISION_ID,
                name="vision",
                embed_dim=feature_dim,
                context_len=max(num_features, 1),
                steered=False,
            ),
            ModalitySpec(
                modality_id=LANGUAGE_ID,
                name="language",
                embed_dim=d,
                context_len=1,
                steered=True,
                identity_projection=True,
            ),
        ],
        d=d,
        num_layers=num_layers,
        heads=heads,
        ffw_hidden=ffw_hidden,
        gate_init_bias=gate_init_bias,
        force_zero_gates=force_zero_gates,
    )


def build_cross_attention_preset(
    num_features: int,
    language: ComponentModel,
    feature_dim: int,
    rng: np.random.Generator,
    d: Optional[int] = None,
    num_layers: Optional[int] = None,
    heads: int = 4,
    ffw_hidden: int = 64,
    gate_init_bias: float = -10.0,
    force_zero_gates: bool = False,
    image_position_token: bool = False,
) -> CrossAttentionPreset:
    """
    Compose ``language`` with a cross-attention style GATS module.

    ``num_layers`` defaults to half the language model's depth.

    Raises
    ------
    ShapeMismatchError
        If ``d`` differs from the language width (identity projections impossible)
    """
    d = language.width if d is None else d
    if d != language.width:
        raise ShapeMismatchError(
            "build_cross_attention_preset", (d,), (language.width,), detail="identity projections need d == language width"
        )
    num_layers = num_layers or max(1, language.num_layers // 2)
    config = cross_attention_config(
        num_features, feature_dim, d, num_layers, heads, ffw_hidden, gate_init_bias, force_zero_gates
    )
    extras = Module()
    if image_position_token:
        extras.register_parameter("image_position", ParameterFactory(rng).normal((d,)))
    language.freeze()
    bundle = GatsBundle(GatsModule(config, rng), {"language": language}, {VISION_ID: None, LANGUAGE_ID: "language"}, extras)
    logger.info(f"Cross-attention preset: V={num_features}, K={num_layers}, plan {bundle.plan.rows}")
    return CrossAttentionPreset(bundle, num_features, feature_dim)


def insertion_points(preset: CrossAttentionPreset) -> List[int]:
    """Language layers after which each adapter runs, in order."""
    return [row[0] for row in preset.bundle.plan.rows]

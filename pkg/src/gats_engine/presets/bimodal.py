# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Paired text/image model: a caption language model and a masked-token vision
model, both steered by one GATS module.

The same pair is fed in two orders. Text first, the image stream is steered by
the caption; image first, the caption stream is steered by the image.
"""

import logging
from typing import Dict, Mapping, Optional

import numpy as np

from gats_engine.components.transformer import ComponentModel
from gats_engine.config.settings import RunConfig
from gats_engine.core.exceptions import ShapeMismatchError
from gats_engine.gats.composer import ActivationCache, GatsBundle, JointOutput, ModalityInput, joint_forward
from gats_engine.gats.layer import GatsModule
from gats_engine.presets.components import build_components, gats_config_from_run, language_spec, vision_spec

logger = logging.getLogger(__name__)

LANGUAGE_ID = 1
VISION_ID = 2


class BimodalPreset:
    def __init__(self, bundle: GatsBundle, frame_tokens: int):
        self.bundle = bundle
        self.frame_tokens = frame_tokens

    @property
    def language(self) -> ComponentModel:
        return self.bundle.model_for(LANGUAGE_ID)

    @property
    def vision(self) -> ComponentModel:
        return self.bundle.model_for(VISION_ID)

    def _steer(self, modality_id: int) -> list:
        return [modality_id] if modality_id in self.bundle.config.steered_ids else []

    def inputs(self, caption: np.ndarray, frame: np.ndarray, text_first: bool) -> Dict[int, ModalityInput]:
        caption = np.asarray(caption, dtype=np.int64).reshape(-1)
        frame = np.asarray(frame, dtype=np.int64).reshape(-1)
        if frame.size != self.frame_tokens:
            raise ShapeMismatchError("bimodal inputs", frame.shape, (self.frame_tokens,), detail="frame")
        n_text, n_image = caption.size, frame.size
        if text_first:
            text_rows = np.arange(n_text)
            image_rows = np.arange(n_text, n_text + n_image)
        else:
            image_rows = np.arange(n_image)
            text_rows = np.arange(n_image, n_image + n_text)
        return {
            LANGUAGE_ID: ModalityInput.of_tokens(LANGUAGE_ID, caption, text_rows),
            VISION_ID: ModalityInput.of_tokens(VISION_ID, frame, image_rows),
        }

    def text_first(
        self, caption: np.ndarray, frame: np.ndarray, cache: Optional[ActivationCache] = None
    ) -> JointOutput:
        """Caption, then image; only vision is steered. Vision logits are ``(F, vocab)``."""
        return joint_forward(
            self.bundle,
            self.inputs(caption, frame, text_first=True),
            cache=cache,
            steer=self._steer(VISION_ID),
            outputs=[VISION_ID],
        )

    def vision_first(
        self, caption: np.ndarray, frame: np.ndarray, cache: Optional[ActivationCache] = None
    ) -> JointOutput:
        """Image, then caption; only language is steered. Language logits are ``(n, vocab)``."""
        return joint_forward(
            self.bundle,
            self.inputs(caption, frame, text_first=False),
            cache=cache,
            steer=self._steer(LANGUAGE_ID),
            outputs=[LANGUAGE_ID],
        )


def build_bimodal_preset(
    config: RunConfig,
    rng: np.random.Generator,
    components: Optional[Mapping[str, ComponentModel]] = None,
) -> BimodalPreset:
    """
    Compose the paired text/image model described by ``config``.

    The vision model sees single frames with a full mask.
    """
    if components is None:
        components = build_components(config, [language_spec(config), vision_spec(config, "full")], rng)
    models = dict(components)
    gats_config = gats_config_from_run(
        config,
        [(LANGUAGE_ID, "language", models["language"].width), (VISION_ID, "vision", models["vision"].width)],
        default_layers=2,
        default_steered=("language", "vision"),
    )
    bundle = GatsBundle(GatsModule(gats_config, rng), models, {LANGUAGE_ID: "language", VISION_ID: "vision"})
    logger.info(f"Bimodal preset: {bundle.gats.parameter_count()} GATS parameters, plan {bundle.plan.rows}")
    return BimodalPreset(bundle, frame_tokens=config.harness.grid_size**2)

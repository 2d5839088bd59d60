# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Component models and GATS configurations built from a run configuration.
"""

import logging
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from gats_engine.components.corpora import clip_corpus, frame_corpus, language_corpus
from gats_engine.components.pretrain import PretrainResult, pretrain_component
from gats_engine.components.transformer import ComponentModel
from gats_engine.config.settings import RunConfig
from gats_engine.core.checkpoint import load_checkpoint, restore_module, save_checkpoint
from gats_engine.core.exceptions import ConfigurationError, GatherError
from gats_engine.core.metrics import MetricsWriter
from gats_engine.gats.composer import ComponentSet
from gats_engine.harness.env import CELL_VOCAB, MASK, GridEnv
from gats_engine.harness.vocab import WORDS
from gats_engine.models.component_models import ComponentSpec
from gats_engine.models.gats_models import GatsConfig, ModalitySpec

logger = logging.getLogger(__name__)

LANGUAGE_MAX_POSITIONS = 32


def language_spec(config: RunConfig) -> ComponentSpec:
    section = config.component("language")
    if section.vocab_size < len(WORDS):
        raise ConfigurationError(f"language vocab_size {section.vocab_size} is below the {len(WORDS)} known words")
    return ComponentSpec(
        name="language",
        vocab_size=section.vocab_size,
        embed_dim=section.embed_dim,
        num_layers=section.num_layers,
        heads=section.heads,
        ffw_hidden=section.ffw_hidden,
        mask_mode="causal",
        max_positions=LANGUAGE_MAX_POSITIONS,
    )


def vision_spec(config: RunConfig, mask_mode: str) -> ComponentSpec:
    """Vision model over cell tokens: ``time_space`` for episodes, ``full`` for single frames."""
    section = config.component("vision")
    if section.vocab_size < CELL_VOCAB:
        raise ConfigurationError(f"vision vocab_size {section.vocab_size} is below the {CELL_VOCAB} cell tokens")
    cells = config.harness.grid_size**2
    return ComponentSpec(
        name="vision",
        vocab_size=section.vocab_size,
        embed_dim=section.embed_dim,
        num_layers=section.num_layers,
        heads=section.heads,
        ffw_hidden=section.ffw_hidden,
        mask_mode=mask_mode,
        max_positions=cells,
        tokens_per_frame=cells,
        max_frames=config.harness.horizon + 1,
    )


def action_spec(config: RunConfig) -> ComponentSpec:
    section = config.component("action")
    return ComponentSpec(
        name="action",
        input_kind="slots",
        embed_dim=section.embed_dim,
        num_layers=section.num_layers,
        heads=section.heads,
        ffw_hidden=section.ffw_hidden,
        mask_mode="causal",
        max_frames=config.harness.horizon + 1,
        slots_per_step=4,
        head="action_mlp",
        num_actions=5,
        mlp_hidden=section.ffw_hidden,
    )


def gats_config_from_run(
    config: RunConfig,
    modalities: Sequence[Tuple[int, str, int]],
    default_layers: int,
    identity: Sequence[str] = (),
    default_steered: Sequence[str] = (),
) -> GatsConfig:
    """
    GATS configuration for ``(modality_id, name, embed_dim)`` triples.

    Raises
    ------
    GatherError
        If the configuration's context lengths or steered set name a modality the
        preset does not have
    ConfigurationError
        If a modality has no context length
    """
    names = {name for _, name, _ in modalities}
    section = config.gats
    unknown = (set(section.context) | set(section.steered or ())) - names
    if unknown:
        raise GatherError(f"preset '{config.preset}' has no modalities named {sorted(unknown)}")
    steered = set(section.steered if section.steered is not None else default_steered)
    specs = []
    for modality_id, name, embed_dim in modalities:
        if name not in section.context:
            raise ConfigurationError(f"gats.context has no entry for modality '{name}'")
        specs.append(
            ModalitySpec(
                modality_id=modality_id,
                name=name,
                embed_dim=embed_dim,
                context_len=section.context[name],
                steered=name in steered,
                identity_projection=name in identity,
            )
        )
    try:
        return GatsConfig(
            modalities=specs,
            d=section.d,
            num_layers=section.num_layers or default_layers,
            heads=section.heads,
            ffw_hidden=section.ffw_hidden,
            gate_init_bias=section.gate_init_bias,
            force_zero_gates=section.force_zero_gates,
        )
    except ValueError as e:
        raise ConfigurationError(f"invalid GATS configuration: {e}") from None


def build_components(config: RunConfig, specs: Sequence[ComponentSpec], rng: np.random.Generator) -> Dict[str, ComponentModel]:
    """Freshly initialised models, frozen according to the configuration."""
    models = {}
    for spec in specs:
        model = ComponentModel(spec, rng)
        if config.component(spec.name).frozen:
            model.freeze()
        models[spec.name] = model
    return models


def pretrain_components(
    config: RunConfig,
    models: Mapping[str, ComponentModel],
    rng: np.random.Generator,
    metrics: Optional[MetricsWriter] = None,
    corpus_size: int = 2000,
) -> Dict[str, PretrainResult]:
    """
    Pretrain token models on synthetic corpora, then restore each model's frozen flag.

    Language learns next-token prediction; vision learns masked-token prediction
    on single frames (``full``) or short clips (``time_space``). Slot-input
    models are trained from scratch later and are skipped here.
    """
    env = GridEnv(config.harness.grid_size, config.harness.horizon)
    hyper = config.training.pretrain_adam()
    results = {}
    for name, model in models.items():
        if model.spec.input_kind != "tokens":
            continue
        was_frozen = model.frozen
        model.unfreeze()
        if name == "language":
            corpus = language_corpus(corpus_size, rng, env)
            objective = "next_token"
        elif model.spec.mask_mode == "time_space":
            corpus = clip_corpus(corpus_size // 4, rng, env)
            objective = "masked_token"
        else:
            corpus = frame_corpus(corpus_size, rng, env)
            objective = "masked_token"
        logger.info(f"Pretraining '{name}' ({objective}) for up to {config.training.pretrain_steps} steps")
        results[name] = pretrain_component(
            model,
            corpus,
            config.training.pretrain_steps,
            objective,
            rng,
            hyper=hyper,
            batch_size=min(config.training.batch_size, 16),
            loss_threshold=config.training.pretrain_loss_threshold,
            mask_token=MASK,
            metrics=metrics,
        )
        if was_frozen:
            model.freeze()
    return results


def save_components(path: Path, models: Mapping[str, ComponentModel], config: RunConfig, rng: np.random.Generator) -> Path:
    return save_checkpoint(
        path, ComponentSet(models), kind="components", config=config.model_dump(by_alias=True), rng=rng
    )


def load_components(path: Path, models: Mapping[str, ComponentModel]) -> None:
    """Restore every model in ``models`` from a components checkpoint."""
    checkpoint = load_checkpoint(path)
    for name, model in models.items():
        restore_module(model, checkpoint, prefix=f"{name}.")
    logger.info(f"Loaded components {sorted(models)} from {path}")

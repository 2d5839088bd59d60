# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Training commands: pretrain, train-agent, train-bimodal and substitute-gats.
"""

import argparse
import logging
from typing import Dict, List

import numpy as np

from gats_engine.components.corpora import caption_corpus
from gats_engine.components.transformer import ComponentModel
from gats_engine.config.settings import RunConfig
from gats_engine.core.checkpoint import save_checkpoint
from gats_engine.harness.bc import bc_train
from gats_engine.harness.dataset import collect_episodes, read_dataset
from gats_engine.harness.env import GridEnv
from gats_engine.models.component_models import ComponentSpec
from gats_engine.presets.agent import build_agent_preset
from gats_engine.presets.bimodal import build_bimodal_preset
from gats_engine.presets.components import (
    action_spec,
    language_spec,
    pretrain_components,
    save_components,
    vision_spec,
)
from gats_engine.prompts.command_prompts import (
    pretrain_prompt,
    substitute_gats_prompt,
    train_agent_prompt,
    train_bimodal_prompt,
)
from gats_engine.resources.reports import substitution_summary
from gats_engine.training.bimodal import BimodalTrainer, substitution_experiment
from gats_engine.utils.validators import validate_preset

logger = logging.getLogger(__name__)

AGENT_PRESETS = ("agent3", "agent3_twoview")
BIMODAL_CORPUS_SIZE = 2000


def preset_specs(config: RunConfig) -> List[ComponentSpec]:
    """Component models of the configured preset."""
    if config.preset == "cross_attention":
        return [language_spec(config)]
    if config.preset == "bimodal":
        return [language_spec(config), vision_spec(config, "full")]
    return [language_spec(config), vision_spec(config, "time_space"), action_spec(config)]


def env_for(config: RunConfig) -> GridEnv:
    return GridEnv(config.harness.grid_size, config.harness.horizon)


def _report_frozen(before: Dict[str, str], models: Dict[str, ComponentModel]) -> None:
    for name, digest in before.items():
        if models[name].parameter_hash() != digest:
            logger.error(f"Frozen component '{name}' changed during training")


def run_pretrain(service, args: argparse.Namespace) -> int:
    config = service.config
    models = service.components(preset_specs(config))
    results = pretrain_components(config, models, service.rng, metrics=service.metrics())
    trained = {name: models[name] for name in results}
    path = save_components(service.checkpoint_path(), trained, config, service.rng)
    for name, result in results.items():
        print(f"{name}: {result.steps} steps, final loss {result.final_loss:.4f}")
    print(f"components: {path}")
    return 0


def run_train_agent(service, args: argparse.Namespace) -> int:
    config = service.config
    validate_preset(config, AGENT_PRESETS, "train-agent")
    models = service.components(preset_specs(config), pretrained=("language", "vision"))
    preset = build_agent_preset(config, service.rng, models)
    frozen = preset.bundle.frozen_hashes()

    env = env_for(config)
    if config.paths.dataset:
        episodes = read_dataset(config.paths.dataset).episodes
    else:
        episodes = collect_episodes(env, config.harness.episodes, config.seed)
    checkpoint = service.checkpoint_path()
    result = bc_train(
        preset,
        episodes,
        config.training.steps,
        config.guidance,
        service.rng,
        hyper=config.training.adam(),
        batch_size=config.training.batch_size,
        metrics=service.metrics(),
        checkpoint_every=config.training.checkpoint_every,
        checkpoint_path=checkpoint,
        run_config=config.model_dump(by_alias=True),
    )
    save_checkpoint(
        checkpoint, preset.bundle, step=result.steps, config=config.model_dump(by_alias=True), rng=service.rng
    )
    _report_frozen(frozen, models)
    print(f"steps: {result.steps}")
    print(f"final loss: {result.final_loss:.4f}")
    print(f"trainable parameters: {preset.bundle.parameter_count(trainable_only=True)}")
    print(f"checkpoint: {checkpoint}")
    return 0


def _bimodal_setup(service):
    config = service.config
    validate_preset(config, ("bimodal",), service.command)
    models = service.components(preset_specs(config), pretrained=("language", "vision"))
    preset = build_bimodal_preset(config, service.rng, models)
    corpus = caption_corpus(BIMODAL_CORPUS_SIZE, service.rng, env_for(config))
    return preset, corpus, models


def run_train_bimodal(service, args: argparse.Namespace) -> int:
    config = service.config
    preset, corpus, models = _bimodal_setup(service)
    frozen = preset.bundle.frozen_hashes()
    trainer = BimodalTrainer(
        preset,
        corpus,
        config.training.adam(),
        service.rng,
        batch_size=config.training.batch_size,
        weights=(config.training.masked_loss_weight, config.training.caption_loss_weight),
        metrics=service.metrics(),
    )
    history = trainer.train(config.training.steps)
    path = save_checkpoint(
        service.checkpoint_path(),
        preset.bundle,
        step=history.steps,
        config=config.model_dump(by_alias=True),
        rng=service.rng,
    )
    _report_frozen(frozen, models)
    for label, losses in (("masked", history.masked_losses), ("caption", history.caption_losses)):
        values = [v for v in losses if v is not None]
        if values:
            head = float(np.mean(values[:10]))
            tail = float(np.mean(values[-10:]))
            print(f"{label} loss: {head:.4f} -> {tail:.4f}")
    print(f"checkpoint: {path}")
    return 0


def run_substitute_gats(service, args: argparse.Namespace) -> int:
    config = service.config
    preset, corpus, _ = _bimodal_setup(service)
    swapped, result = substitution_experiment(
        preset,
        corpus,
        config.training.adam(),
        service.rng,
        config.training.steps,
        batch_size=config.training.batch_size,
        window=config.training.target_smoothing,
        metrics=service.metrics(),
    )
    save_checkpoint(
        service.checkpoint_path(),
        swapped.bundle,
        step=config.training.steps,
        config=config.model_dump(by_alias=True),
        rng=service.rng,
    )
    print(substitution_summary(result))
    return 0


def initialize_training_commands(subparsers, common: argparse.ArgumentParser) -> None:
    """Register the training subcommands."""
    commands = (
        ("pretrain", pretrain_prompt, run_pretrain),
        ("train-agent", train_agent_prompt, run_train_agent),
        ("train-bimodal", train_bimodal_prompt, run_train_bimodal),
        ("substitute-gats", substitute_gats_prompt, run_substitute_gats),
    )
    for name, prompt, handler in commands:
        parser = subparsers.add_parser(name, parents=[common], help=prompt.splitlines()[0], description=prompt)
        parser.set_defaults(handler=handler)

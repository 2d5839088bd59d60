# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Behaviour cloning of the scripted expert.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Mapping, Optional, Sequence

import numpy as np

from gats_engine.components.pretrain import batch_loss
from gats_engine.core.checkpoint import save_checkpoint
from gats_engine.core.exceptions import DatasetError, DivergenceError, NonFiniteError
from gats_engine.core.metrics import MetricsWriter
from gats_engine.core.tensor import Tape
from gats_engine.gats.composer import ActivationCache
from gats_engine.harness.dataset import EpisodeRecord
from gats_engine.models.training_models import AdamConfig, CfgPolicyConfig
from gats_engine.presets.agent import AgentPreset
from gats_engine.training.guidance import cfg_train_mask
from gats_engine.training.optim import AdamState, adam_step, global_grad_norm

logger = logging.getLogger(__name__)


@dataclass
class BcResult:
    steps: int = 0
    losses: List[float] = field(default_factory=list)
    masked_instructions: int = 0
    checkpoints: List[Path] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


def bc_train(
    preset: AgentPreset,
    episodes: Sequence[EpisodeRecord],
    steps: int,
    cfg: CfgPolicyConfig,
    rng: np.random.Generator,
    hyper: Optional[AdamConfig] = None,
    batch_size: int = 8,
    metrics: Optional[MetricsWriter] = None,
    checkpoint_every: int = 0,
    checkpoint_path: Optional[Path] = None,
    run_config: Optional[Mapping[str, Any]] = None,
    log_every: int = 50,
) -> BcResult:
    """
    Train the GATS module and action model on expert episodes.

    Each episode's instruction is replaced by the null sequence with probability
    ``cfg.mask_prob``. Frozen components are untouched.

    Raises
    ------
    DatasetError
        If ``episodes`` is empty and ``steps`` > 0
    DivergenceError
        If the loss or the gradient norm becomes non-finite
    """
    result = BcResult()
    if steps <= 0:
        return result
    if not episodes:
        raise DatasetError("behaviour cloning needs at least one episode")
    hyper = hyper or AdamConfig()
    bundle = preset.bundle
    params = bundle.trainable_parameters()
    state = AdamState()
    cache = ActivationCache()
    logger.info(f"Behaviour cloning: {len(params)} trainable tensors, {len(episodes)} episodes, {steps} steps")

    for step in range(1, steps + 1):
        picks = rng.integers(len(episodes), size=batch_size)
        batch = [episodes[i] for i in picks]
        originals = [record.instruction for record in batch]
        instructions = cfg_train_mask(originals, cfg.mask_prob, rng, preset.null_tokens)
        result.masked_instructions += sum(a is not b for a, b in zip(originals, instructions))

        bundle.zero_grad()
        try:
            with Tape() as tape:
                loss = batch_loss(
                    [preset.episode_loss(record, instr, cache) for record, instr in zip(batch, instructions)]
                )
                tape.backward(loss)
        except NonFiniteError as e:
            logger.error(f"Behaviour cloning diverged at step {step}: {e}")
            raise DivergenceError("bc_train", step, str(e)) from e
        norm = global_grad_norm(params)
        if not np.isfinite(norm):
            raise DivergenceError("bc_train", step, f"gradient norm {norm}")
        lr = adam_step(params, None, state, hyper)

        value = loss.item()
        result.steps = step
        result.losses.append(value)
        if metrics is not None:
            metrics.write({"step": step, "loss": value, "lr": lr, "grad_norm": norm})
        if step % log_every == 0:
            logger.info(f"[bc] step {step}: loss {value:.4f}")
        if checkpoint_path is not None and checkpoint_every and step % checkpoint_every == 0:
            result.checkpoints.append(
                save_checkpoint(checkpoint_path, bundle, kind="bundle", step=step, config=run_config, rng=rng)
            )
    return result

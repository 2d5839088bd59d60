# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Two-pass training of a paired text/image model.

Every batch is processed twice through the same GATS layers:

    pass A  caption first, image steered   masked image-token prediction
    pass B  image first, caption steered   next-token caption prediction

Each pass runs its own backward; gradients add up in the shared GATS
parameters before a single optimiser step.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from gats_engine.components.pretrain import batch_loss, mask_tokens, next_token_targets
from gats_engine.core import ops
from gats_engine.core.exceptions import DatasetError, DivergenceError, NonFiniteError
from gats_engine.core.metrics import MetricsWriter
from gats_engine.core.tensor import Tape, Tensor
from gats_engine.gats.composer import ActivationCache, SubstitutionReport, substitute_gats
from gats_engine.harness.env import MASK
from gats_engine.models.training_models import AdamConfig
from gats_engine.presets.bimodal import LANGUAGE_ID, VISION_ID, BimodalPreset
from gats_engine.training.optim import AdamState, adam_step, global_grad_norm

logger = logging.getLogger(__name__)

Pair = Tuple[np.ndarray, np.ndarray]


@dataclass
class PairedBatch:
    captions: List[np.ndarray]
    frames: List[np.ndarray]

    def __post_init__(self):
        if len(self.captions) != len(self.frames):
            raise DatasetError(f"unpaired batch: {len(self.captions)} captions for {len(self.frames)} frames")
        if not self.captions:
            raise DatasetError("empty batch")

    @classmethod
    def of(cls, pairs: Sequence[Pair]) -> "PairedBatch":
        return cls([c for c, _ in pairs], [f for _, f in pairs])

    def __len__(self) -> int:
        return len(self.captions)


@dataclass
class TwoPassLosses:
    """Losses of one step; a pass with weight 0 is skipped and reports ``None``."""

    masked_loss: Optional[float]
    caption_loss: Optional[float]


def pass_a_loss(
    preset: BimodalPreset,
    caption: np.ndarray,
    frame: np.ndarray,
    rng: np.random.Generator,
    rate: Optional[float] = None,
    cache: Optional[ActivationCache] = None,
) -> Tensor:
    """Masked image-token loss with the caption arriving first."""
    masked, targets = mask_tokens(np.asarray(frame, dtype=np.int64).reshape(-1), rng, MASK, rate)
    logits = preset.text_first(caption, masked, cache=cache).logits[VISION_ID]
    return ops.cross_entropy(logits, targets)


def pass_b_loss(
    preset: BimodalPreset,
    caption: np.ndarray,
    frame: np.ndarray,
    cache: Optional[ActivationCache] = None,
) -> Tensor:
    """Next-token caption loss with the image arriving first."""
    caption = np.asarray(caption, dtype=np.int64).reshape(-1)
    logits = preset.vision_first(caption, frame, cache=cache).logits[LANGUAGE_ID]
    return ops.cross_entropy(logits, next_token_targets(caption))


def two_pass_step(
    preset: BimodalPreset,
    batch: PairedBatch,
    rng: np.random.Generator,
    weights: Tuple[float, float] = (1.0, 1.0),
    rate: Optional[float] = None,
    cache: Optional[ActivationCache] = None,
) -> TwoPassLosses:
    """
    Forward and backward of both passes; gradients accumulate into ``.grad``.

    Gradients are not cleared first and no optimiser step is taken.

    Raises
    ------
    NonFiniteError
        If either pass produces a non-finite value
    """
    masked_weight, caption_weight = weights
    masked_value = caption_value = None
    if masked_weight > 0:
        with Tape() as tape:
            loss = batch_loss(
                [pass_a_loss(preset, c, f, rng, rate, cache) for c, f in zip(batch.captions, batch.frames)]
            )
            tape.backward(ops.scale(loss, masked_weight))
        masked_value = loss.item()
    if caption_weight > 0:
        with Tape() as tape:
            loss = batch_loss([pass_b_loss(preset, c, f, cache) for c, f in zip(batch.captions, batch.frames)])
            tape.backward(ops.scale(loss, caption_weight))
        caption_value = loss.item()
    return TwoPassLosses(masked_value, caption_value)


def steps_to_target(losses: Sequence[Optional[float]], target: float, window: int = 10) -> Optional[int]:
    """First 1-based step whose trailing mean over ``window`` steps is at or below ``target``."""
    values = [np.nan if v is None else v for v in losses]
    for step in range(1, len(values) + 1):
        recent = values[max(0, step - window) : step]
        if np.isfinite(recent).all() and float(np.mean(recent)) <= target:
            return step
    return None


@dataclass
class BimodalHistory:
    masked_losses: List[Optional[float]] = field(default_factory=list)
    caption_losses: List[Optional[float]] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.masked_losses)


class BimodalTrainer:
    """
    Adam over every trainable parameter of a bimodal bundle, one two-pass step at a time.

    Parameters
    ----------
    preset : BimodalPreset
        The model to train
    corpus : sequence of (caption, frame)
        Paired training examples
    hyper : AdamConfig
        Optimiser settings
    rng : np.random.Generator
        Batch sampling and masking randomness
    batch_size : int
        Pairs per step
    weights : tuple of float
        Loss weights of pass A and pass B
    metrics : MetricsWriter, optional
        Per-step records
    """

    def __init__(
        self,
        preset: BimodalPreset,
        corpus: Sequence[Pair],
        hyper: AdamConfig,
        rng: np.random.Generator,
        batch_size: int = 8,
        weights: Tuple[float, float] = (1.0, 1.0),
        metrics: Optional[MetricsWriter] = None,
        log_every: int = 50,
    ):
        if not corpus:
            raise DatasetError("bimodal training needs a nonempty paired corpus")
        self.preset = preset
        self.corpus = list(corpus)
        self.hyper = hyper
        self.rng = rng
        self.batch_size = batch_size
        self.weights = weights
        self.metrics = metrics
        self.log_every = log_every
        self.state = AdamState()
        self.cache = ActivationCache()
        self.history = BimodalHistory()

    def step(self) -> TwoPassLosses:
        bundle = self.preset.bundle
        params = bundle.trainable_parameters()
        picks = self.rng.integers(len(self.corpus), size=self.batch_size)
        batch = PairedBatch.of([self.corpus[i] for i in picks])
        step = self.state.step + 1
        bundle.zero_grad()
        try:
            losses = two_pass_step(self.preset, batch, self.rng, self.weights, cache=self.cache)
        except NonFiniteError as e:
            logger.error(f"Bimodal training diverged at step {step}: {e}")
            raise DivergenceError("bimodal", step, str(e)) from e
        norm = global_grad_norm(params)
        if not np.isfinite(norm):
            raise DivergenceError("bimodal", step, f"gradient norm {norm}")
        lr = adam_step(params, None, self.state, self.hyper)

        self.history.masked_losses.append(losses.masked_loss)
        self.history.caption_losses.append(losses.caption_loss)
        if self.metrics is not None:
            self.metrics.write(
                {
                    "step": step,
                    "loss": sum(v for v in (losses.masked_loss, losses.caption_loss) if v is not None),
                    "masked_loss": losses.masked_loss,
                    "caption_loss": losses.caption_loss,
                    "lr": lr,
                    "grad_norm": norm,
                }
            )
        if step % self.log_every == 0:
            logger.info(f"[bimodal] step {step}: masked {losses.masked_loss}, caption {losses.caption_loss}")
        return losses

    def train(self, steps: int) -> BimodalHistory:
        for _ in range(steps):
            self.step()
        return self.history


# --------------------------------------------------------------------------- #
# Substitution experiment
# --------------------------------------------------------------------------- #
@dataclass
class SubstitutionResult:
    target: float
    original_steps: Optional[int]
    substituted_steps: Optional[int]
    report: SubstitutionReport
    original: BimodalHistory
    substituted: BimodalHistory

    @property
    def ratio(self) -> Optional[float]:
        """Substituted over original steps-to-target."""
        if not self.original_steps or self.substituted_steps is None:
            return None
        return self.substituted_steps / self.original_steps


def substitution_experiment(
    preset: BimodalPreset,
    corpus: Sequence[Pair],
    hyper: AdamConfig,
    rng: np.random.Generator,
    steps: int,
    batch_size: int = 8,
    window: int = 10,
    metrics: Optional[MetricsWriter] = None,
) -> Tuple[BimodalPreset, SubstitutionResult]:
    """
    Train GATS with a trainable vision model, then swap in a fresh GATS and retrain it alone.

    The target is the smoothed masked loss the first run ends on; both runs are
    scored by the number of steps they need to reach it.
    """
    preset.vision.unfreeze()
    original = BimodalTrainer(preset, corpus, hyper, rng, batch_size, metrics=metrics).train(steps)
    tail = [v for v in original.masked_losses[-window:] if v is not None]
    target = float(np.mean(tail)) if tail else float("nan")
    original_steps = steps_to_target(original.masked_losses, target, window)

    bundle, report = substitute_gats(preset.bundle, preset.bundle.config, rng)
    swapped = BimodalPreset(bundle, preset.frame_tokens)
    substituted = BimodalTrainer(swapped, corpus, hyper, rng, batch_size, metrics=metrics).train(steps)
    substituted_steps = steps_to_target(substituted.masked_losses, target, window)
    logger.info(f"Steps to masked loss {target:.4f}: original {original_steps}, after substitution {substituted_steps}")
    return swapped, SubstitutionResult(target, original_steps, substituted_steps, report, original, substituted)

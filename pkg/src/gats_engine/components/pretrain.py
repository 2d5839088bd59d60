# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Pretraining loops for component models.

Token models are trained either on next-token prediction (language) or on
single-shot masked-token prediction (vision). Once trained they are frozen and
handed to a GATS bundle.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np

from gats_engine.components.transformer import ComponentModel
from gats_engine.core import ops
from gats_engine.core.exceptions import DivergenceError, NonFiniteError
from gats_engine.core.metrics import MetricsWriter
from gats_engine.core.ops import IGNORE_INDEX
from gats_engine.core.tensor import Tape, Tensor
from gats_engine.models.training_models import AdamConfig
from gats_engine.training.optim import AdamState, adam_step, global_grad_norm

logger = logging.getLogger(__name__)

Objective = Literal["next_token", "masked_token"]
MASK_RATE_RANGE = (0.2, 0.8)


@dataclass
class PretrainResult:
    steps: int
    final_loss: float
    losses: List[float] = field(default_factory=list)
    reached_threshold: bool = False


def next_token_targets(tokens: np.ndarray) -> np.ndarray:
    """Targets for a 1-D sequence: the following token, ignored at the last position."""
    targets = np.full(tokens.shape, IGNORE_INDEX, dtype=np.int64)
    targets[:-1] = tokens[1:]
    return targets


def mask_tokens(
    tokens: np.ndarray,
    rng: np.random.Generator,
    mask_token: int,
    rate: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Replace a random subset of ``tokens`` with ``mask_token``.

    The rate is drawn uniformly from ``MASK_RATE_RANGE`` unless given. Returns
    ``(masked_tokens, targets)`` where unmasked targets are ignored.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if rate is None:
        rate = float(rng.uniform(*MASK_RATE_RANGE))
    chosen = rng.random(tokens.shape) < rate
    masked = np.where(chosen, mask_token, tokens)
    targets = np.where(chosen, tokens, IGNORE_INDEX)
    return masked, targets.reshape(-1)


def example_loss(
    model: ComponentModel,
    tokens: np.ndarray,
    objective: Objective,
    rng: np.random.Generator,
    mask_token: int = 0,
) -> Tensor:
    if objective == "next_token":
        logits, _ = model.forward_with_taps(tokens=tokens)
        return ops.cross_entropy(logits, next_token_targets(np.asarray(tokens)))
    masked, targets = mask_tokens(tokens, rng, mask_token)
    logits, _ = model.forward_with_taps(tokens=masked)
    return ops.cross_entropy(logits, targets)


def batch_loss(losses: Sequence[Tensor]) -> Tensor:
    """Mean of scalar losses."""
    total = losses[0]
    for loss in losses[1:]:
        total = ops.add(total, loss)
    return ops.scale(total, 1.0 / len(losses))


def pretrain_component(
    model: ComponentModel,
    corpus: Sequence[np.ndarray],
    steps: int,
    objective: Objective,
    rng: np.random.Generator,
    hyper: Optional[AdamConfig] = None,
    batch_size: int = 8,
    loss_threshold: Optional[float] = None,
    mask_token: int = 0,
    metrics: Optional[MetricsWriter] = None,
    log_every: int = 50,
) -> PretrainResult:
    """
    Train ``model`` on ``corpus`` with Adam.

    Stops early once the mean loss over the last 10 steps is at or below
    ``loss_threshold``.

    Raises
    ------
    DivergenceError
        If the loss or any gradient becomes non-finite
    """
    hyper = hyper or AdamConfig()
    state = AdamState()
    params = model.trainable_parameters()
    if not params:
        logger.warning(f"Model '{model.name}' is frozen; pretraining will not change it")
    result = PretrainResult(steps=0, final_loss=float("nan"))

    for step in range(1, steps + 1):
        picks = rng.integers(len(corpus), size=batch_size)
        model.zero_grad()
        try:
            with Tape() as tape:
                loss = batch_loss([example_loss(model, corpus[i], objective, rng, mask_token) for i in picks])
                tape.backward(loss)
        except NonFiniteError as e:
            logger.error(f"Pretraining '{model.name}' diverged at step {step}: {e}")
            raise DivergenceError(model.name, step, str(e)) from e

        value = loss.item()
        norm = global_grad_norm(params)
        if not np.isfinite(norm):
            raise DivergenceError(model.name, step, f"gradient norm {norm}")
        lr = adam_step(params, None, state, hyper)
        result.steps = step
        result.final_loss = value
        result.losses.append(value)
        if metrics is not None:
            metrics.write({"step": step, "loss": value, "lr": lr, "grad_norm": norm, "model": model.name})
        if step % log_every == 0:
            logger.info(f"[{model.name}] step {step}: loss {value:.4f}")
        if loss_threshold is not None and len(result.losses) >= 10:
            if float(np.mean(result.losses[-10:])) <= loss_threshold:
                result.reached_threshold = True
                logger.info(f"[{model.name}] reached loss threshold {loss_threshold} at step {step}")
                break
    return result


def next_token_accuracy(model: ComponentModel, corpus: Sequence[np.ndarray]) -> float:
    """Fraction of positions (all but the last of each sequence) whose argmax is the next token."""
    correct = 0
    total = 0
    for tokens in corpus:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.size < 2:
            continue
        logits, _ = model.forward_with_taps(tokens=tokens)
        predicted = np.argmax(logits.data[:-1], axis=-1)
        correct += int(np.sum(predicted == tokens[1:]))
        total += tokens.size - 1
    return correct / total if total else 0.0

# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Adam with bias correction and a linear warm-up schedule.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from gats_engine.core.exceptions import ShapeMismatchError
from gats_engine.core.tensor import Tensor
from gats_engine.models.training_models import AdamConfig

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """First/second moments keyed by parameter identity, plus the step count."""

    step: int = 0
    m: Dict[int, np.ndarray] = field(default_factory=dict)
    v: Dict[int, np.ndarray] = field(default_factory=dict)


def learning_rate(hyper: AdamConfig, step: int) -> float:
    """Rate for the 1-based ``step``: linear warm-up, then constant."""
    if hyper.warmup_steps <= 0:
        return hyper.lr
    return hyper.lr * min(1.0, step / hyper.warmup_steps)


def global_grad_norm(params: Sequence[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))


def adam_step(
    params: Sequence[Tensor],
    grads: Optional[Sequence[Optional[np.ndarray]]],
    state: AdamState,
    hyper: AdamConfig,
) -> float:
    """
    Apply one Adam update.

    Parameters
    ----------
    params : sequence of Tensor
        Candidate parameters; frozen ones (``requires_grad`` False) are skipped
    grads : sequence of np.ndarray, optional
        Gradients aligned with ``params``; defaults to each ``param.grad``.
        Parameters without a gradient are skipped.
    state : AdamState
        Moments, updated in place
    hyper : AdamConfig
        Hyperparameters

    Returns
    -------
    float
        Learning rate used for this step

    Raises
    ------
    ShapeMismatchError
        If a gradient or stored moment does not match its parameter
    """
    if grads is None:
        grads = [p.grad for p in params]
    if len(grads) != len(params):
        raise ShapeMismatchError("adam_step", (len(params),), (len(grads),), detail="one gradient per parameter")

    state.step += 1
    lr = learning_rate(hyper, state.step)
    correction1 = 1.0 - hyper.beta1 ** state.step
    correction2 = 1.0 - hyper.beta2 ** state.step

    for p, g in zip(params, grads):
        if not p.requires_grad or g is None:
            continue
        if g.shape != p.shape:
            raise ShapeMismatchError("adam_step", p.shape, g.shape, detail=p.name or "parameter")
        key = id(p)
        m = state.m.get(key)
        v = state.v.get(key)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        elif m.shape != p.shape:
            raise ShapeMismatchError("adam_step", p.shape, m.shape, detail="stored moment")
        m = hyper.beta1 * m + (1.0 - hyper.beta1) * g
        v = hyper.beta2 * v + (1.0 - hyper.beta2) * g * g
        state.m[key] = m
        state.v[key] = v
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + hyper.eps)
        p.data = p.data - update
    return lr

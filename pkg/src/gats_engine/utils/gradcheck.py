# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Finite-difference gradient checking.
"""

import logging
from typing import Callable, Dict, Sequence

import numpy as np

from gats_engine.core.tensor import Tape, Tensor

logger = logging.getLogger(__name__)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1.0) -> np.ndarray:
    """
    Elementwise |a - b| / max(|a|, |b|, floor).

    The error is relative where either value exceeds ``floor`` and absolute
    (scaled by ``1 / floor``) below it. The default floor of 1 suits the
    O(1) gradients checked here; finite differences with ``h=1e-6`` carry
    roughly 1e-10 of roundoff, so a floor much below 1e-4 turns exact zero
    gradients into spurious failures.
    """
    if floor <= 0.0:
        raise ValueError(f"floor must be positive, got {floor}")
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def gradcheck(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-6,
    floor: float = 1.0,
) -> float:
    """
    Compare tape gradients of ``loss_fn`` with central finite differences.

    Parameters
    ----------
    loss_fn : callable
        Zero-argument function building a scalar loss from ``params``
    params : sequence of Tensor
        Tensors to perturb; their ``grad`` buffers are reset
    h : float, default=1e-6
        Finite-difference step
    floor : float, default=1.0
        Magnitude below which errors are measured absolutely, see ``relative_error``

    Returns
    -------
    float
        Worst elementwise relative error over all parameters
    """
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    analytic: Dict[int, np.ndarray] = {
        id(p): (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for p in params
    }

    worst = 0.0
    for p in params:
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            plus = loss_fn().item()
            flat[i] = original - h
            minus = loss_fn().item()
            flat[i] = original
            numeric.reshape(-1)[i] = (plus - minus) / (2.0 * h)
        err = float(np.max(relative_error(analytic[id(p)], numeric, floor))) if numeric.size else 0.0
        if err > worst:
            worst = err
        logger.debug(f"gradcheck {p.name or 'tensor'} {p.shape}: max relative error {err:.3e}")
    return worst

# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Classifier-free guidance for discrete policies.

    pi(x, c) = softmax(l(x, c) + lambda * (l(x, c) - l(x)))

Training drops the whole instruction of an episode with probability
``mask_prob``, replacing it with the null-conditioning sequence.
"""

from typing import List, Sequence, TypeVar

import numpy as np

from gats_engine.core.exceptions import GuidanceError

T = TypeVar("T")


def guided_logits(l_cond: np.ndarray, l_uncond: np.ndarray, lam: float) -> np.ndarray:
    l_cond = np.asarray(l_cond, dtype=np.float64)
    l_uncond = np.asarray(l_uncond, dtype=np.float64)
    if l_cond.shape != l_uncond.shape:
        raise GuidanceError(f"conditional logits {l_cond.shape} and unconditional logits {l_uncond.shape} differ")
    if lam < 0:
        raise GuidanceError(f"guidance strength must be >= 0, got {lam}")
    if lam == 0:
        return l_cond
    return l_cond + lam * (l_cond - l_uncond)


def guided_policy(l_cond: np.ndarray, l_uncond: np.ndarray, lam: float) -> np.ndarray:
    """
    Guided action distribution over the last axis.

    Raises
    ------
    GuidanceError
        If the logit shapes differ or ``lam`` is negative
    """
    combined = guided_logits(l_cond, l_uncond, lam)
    shifted = combined - np.max(combined, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=-1, keepdims=True)


def cfg_train_mask(
    instructions: Sequence[np.ndarray],
    mask_prob: float,
    rng: np.random.Generator,
    null_sequence: np.ndarray,
) -> List[np.ndarray]:
    """
    Replace each episode's instruction with ``null_sequence`` with probability ``mask_prob``.

    One uniform draw is consumed per episode whatever ``mask_prob`` is, so the
    random stream does not depend on the masking rate.
    """
    if not 0.0 <= mask_prob <= 1.0:
        raise GuidanceError(f"mask_prob must lie in [0, 1], got {mask_prob}")
    draws = rng.random(len(instructions))
    return [null_sequence if draw < mask_prob else instruction for instruction, draw in zip(instructions, draws)]


def mask_rate(original: Sequence[T], masked: Sequence[T]) -> float:
    """Fraction of entries that were replaced."""
    if not original:
        return 0.0
    return sum(a is not b for a, b in zip(original, masked)) / len(original)

# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Slow, obviously-correct reimplementations used as test oracles.
"""

import math
from typing import Dict, List, Sequence, Tuple


def proportional_plan(K: int, layer_counts: Sequence[int]) -> List[Tuple[int, ...]]:
    rows = []
    for k in range(1, K + 1):
        row = []
        for n in layer_counts:
            point = math.floor(k * n / K)
            row.append(min(max(1, point), n - 1))
        rows.append(tuple(row))
    return rows


def gather_positions(modality_ids: Sequence[int], limits: Dict[int, int]) -> List[int]:
    """Positions of the last ``limits[m]`` elements of every modality, in sequence order."""
    keep = set()
    for m, n in limits.items():
        positions = [i for i, mid in enumerate(modality_ids) if mid == m]
        keep.update(positions[max(0, len(positions) - n) :])
    return sorted(keep)


def guided_distribution(l_cond: Sequence[float], l_uncond: Sequence[float], lam: float) -> List[float]:
    combined = [c + lam * (c - u) for c, u in zip(l_cond, l_uncond)]
    top = max(combined)
    weights = [math.exp(v - top) for v in combined]
    total = sum(weights)
    return [w / total for w in weights]


def adam_first_step(grad: float, lr: float, eps: float = 1e-8) -> float:
    """Size of Adam's first bias-corrected update."""
    m_hat = grad
    v_hat = grad * grad
    return lr * m_hat / (math.sqrt(v_hat) + eps)

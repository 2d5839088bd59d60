# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Parameter containers.

A :class:`Module` owns named parameter tensors and child modules. Freezing a
module turns off ``requires_grad`` on everything it owns, so frozen weights are
never recorded on a tape and never touched by the optimizer.
"""

from __future__ import annotations

import hashlib
import logging
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from gats_engine.core.exceptions import ShapeMismatchError, TopologyMismatchError
from gats_engine.core.tensor import Tensor

logger = logging.getLogger(__name__)


class Module:
    """Base class for every parameterised building block."""

    def __init__(self):
        self._parameters: Dict[str, Tensor] = {}
        self._children: Dict[str, "Module"] = {}
        self.frozen = False

    # --- registration ---
    def register_parameter(self, name: str, tensor: Tensor) -> Tensor:
        tensor.requires_grad = not self.frozen
        tensor.name = name
        self._parameters[name] = tensor
        return tensor

    def add_module(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        if self.frozen:
            module.freeze()
        return module

    def children(self) -> Iterator[Tuple[str, "Module"]]:
        yield from self._children.items()

    # --- traversal ---
    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, tensor in self._parameters.items():
            yield f"{prefix}{name}", tensor
        for child_name, child in self._children.items():
            yield from child.named_parameters(prefix=f"{prefix}{child_name}.")

    def parameters(self) -> List[Tensor]:
        return [t for _, t in self.named_parameters()]

    def trainable_parameters(self) -> List[Tensor]:
        return [t for t in self.parameters() if t.requires_grad]

    def parameter_count(self, trainable_only: bool = False) -> int:
        tensors = self.trainable_parameters() if trainable_only else self.parameters()
        return int(sum(t.size for t in tensors))

    # --- freezing ---
    def freeze(self) -> "Module":
        self.frozen = True
        for tensor in self._parameters.values():
            tensor.requires_grad = False
            tensor.grad = None
        for child in self._children.values():
            child.freeze()
        return self

    def unfreeze(self) -> "Module":
        self.frozen = False
        for tensor in self._parameters.values():
            tensor.requires_grad = True
        for child in self._children.values():
            child.unfreeze()
        return self

    def zero_grad(self) -> None:
        for tensor in self.parameters():
            tensor.zero_grad()

    # --- identity ---
    def parameter_hash(self) -> str:
        """SHA-256 over parameter names, shapes and raw bytes in registration order."""
        digest = hashlib.sha256()
        for name, tensor in self.named_parameters():
            digest.update(name.encode("utf-8"))
            digest.update(repr(tensor.shape).encode("utf-8"))
            digest.update(np.ascontiguousarray(tensor.data).tobytes())
        return digest.hexdigest()

    def topology(self) -> List[Tuple[str, Tuple[int, ...]]]:
        return [(name, tensor.shape) for name, tensor in self.named_parameters()]

    # --- state ---
    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: tensor.data.copy() for name, tensor in self.named_parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        """
        Copy arrays from ``state`` into the matching parameters.

        Raises
        ------
        TopologyMismatchError
            If ``strict`` and the name sets differ
        ShapeMismatchError
            If a named array has the wrong shape
        """
        own = dict(self.named_parameters())
        missing = [n for n in own if n not in state]
        unexpected = [n for n in state if n not in own]
        if strict and (missing or unexpected):
            raise TopologyMismatchError(missing, unexpected)
        for name, tensor in own.items():
            if name not in state:
                continue
            values = np.asarray(state[name], dtype=np.float64)
            if values.shape != tensor.shape:
                raise ShapeMismatchError("load_state_dict", tensor.shape, values.shape, detail=name)
            tensor.data = values.copy()


class ParameterFactory:
    """
    Seeded initialiser for parameter tensors.

    Parameters
    ----------
    rng : np.random.Generator
        Source of randomness; every draw advances it
    std : float, default=0.02
        Standard deviation of normal initialisation
    """

    def __init__(self, rng: np.random.Generator, std: float = 0.02):
        self.rng = rng
        self.std = std

    def normal(self, shape: Sequence[int], std: Optional[float] = None) -> Tensor:
        scale = self.std if std is None else std
        return Tensor(self.rng.normal(0.0, scale, size=tuple(shape)), requires_grad=True)

    def zeros(self, shape: Sequence[int]) -> Tensor:
        return Tensor(np.zeros(tuple(shape)), requires_grad=True)

    def ones(self, shape: Sequence[int]) -> Tensor:
        return Tensor(np.ones(tuple(shape)), requires_grad=True)

    def full(self, shape: Sequence[int], value: float) -> Tensor:
        return Tensor(np.full(tuple(shape), float(value)), requires_grad=True)

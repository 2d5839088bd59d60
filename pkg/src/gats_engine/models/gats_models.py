# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Typed configuration for GATS layers and interleave plans.
"""

import math
from typing import List, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator


class ModalitySpec(BaseModel):
    """One modality as seen by a GATS layer."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    modality_id: int = Field(ge=1, description="Modality id, 1..M")
    name: str = Field(description="Human readable modality name")
    embed_dim: int = Field(ge=1, description="Width of the modality's native activations")
    context_len: int = Field(ge=1, description="Local context length N_m")
    steered: bool = Field(default=False, description="Membership in the steered set S")
    identity_projection: bool = Field(
        default=False,
        description="Use identity maps for p_m and r_m; requires embed_dim == d",
    )


class GatsConfig(BaseModel):
    """Hyperparameters shared by all K layers of a GATS module."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    modalities: List[ModalitySpec]
    d: int = Field(ge=1, description="Projected embedding size")
    num_layers: int = Field(default=1, ge=1, description="Number of GATS layers K")
    heads: int = Field(default=2, ge=1)
    ffw_hidden: int = Field(default=32, ge=1)
    gate_init_bias: float = Field(
        default=-10.0,
        description="Initial gate bias; -inf forces every gate to exactly 0",
    )
    force_zero_gates: bool = Field(default=False, description="Debug flag: all gates are exactly 0")

    @model_validator(mode="after")
    def check_consistency(self):
        if not self.modalities:
            raise ValueError("at least one modality is required")
        ids = [m.modality_id for m in self.modalities]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate modality ids: {ids}")
        names = [m.name for m in self.modalities]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate modality names: {names}")
        if not any(m.steered for m in self.modalities):
            raise ValueError("the steered set S must be nonempty")
        if self.d % self.heads != 0:
            raise ValueError(f"heads ({self.heads}) must divide d ({self.d})")
        for m in self.modalities:
            if m.identity_projection and m.embed_dim != self.d:
                raise ValueError(
                    f"modality '{m.name}' uses identity projections but embed_dim "
                    f"{m.embed_dim} != d {self.d}"
                )
        if math.isnan(self.gate_init_bias) or self.gate_init_bias == math.inf:
            raise ValueError("gate_init_bias must be finite or -inf")
        return self

    @property
    def K(self) -> int:
        return self.num_layers

    @property
    def gates_disabled(self) -> bool:
        return self.force_zero_gates or self.gate_init_bias == -math.inf

    @property
    def steered_ids(self) -> Tuple[int, ...]:
        return tuple(m.modality_id for m in self.modalities if m.steered)

    def spec(self, modality_id: int) -> ModalitySpec:
        for m in self.modalities:
            if m.modality_id == modality_id:
                return m
        raise KeyError(modality_id)

    def by_name(self, name: str) -> ModalitySpec:
        for m in self.modalities:
            if m.name == name:
                return m
        raise KeyError(name)


class InterleavePlan(BaseModel):
    """
    Insertion points of K GATS layers inside M component models.

    ``rows[k - 1][i]`` is l_{k,i}: GATS layer k reads the output of layer
    l_{k,i} of model i and, if model i is steered, feeds its update to layer
    l_{k,i} + 1.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    K: int = Field(ge=1)
    layer_counts: Tuple[int, ...]
    rows: Tuple[Tuple[int, ...], ...]

    @model_validator(mode="after")
    def check_bounds(self):
        if len(self.rows) != self.K:
            raise ValueError(f"expected {self.K} rows, got {len(self.rows)}")
        for k, row in enumerate(self.rows, start=1):
            if len(row) != len(self.layer_counts):
                raise ValueError(f"row {k} has {len(row)} entries for {len(self.layer_counts)} models")
            for i, (value, total) in enumerate(zip(row, self.layer_counts)):
                if not 1 <= value <= total - 1:
                    raise ValueError(f"l[{k},{i + 1}]={value} outside [1, {total - 1}]")
        for i in range(len(self.layer_counts)):
            column = [row[i] for row in self.rows]
            if any(b < a for a, b in zip(column, column[1:])):
                raise ValueError(f"insertion points of model {i + 1} decrease: {column}")
        return self

    def for_layer(self, k: int) -> Tuple[int, ...]:
        """Insertion points of the 1-based GATS layer ``k``."""
        return self.rows[k - 1]

    def column(self, model_index: int) -> Tuple[int, ...]:
        return tuple(row[model_index] for row in self.rows)

# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Typed descriptions of component transformers.
"""

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator


class ComponentSpec(BaseModel):
    """Architecture of one toy component transformer."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    input_kind: Literal["tokens", "slots"] = Field(
        default="tokens",
        description="Token ids, or a fixed number of learned slot embeddings per step",
    )
    vocab_size: int = Field(default=32, ge=1)
    embed_dim: int = Field(default=32, ge=1)
    num_layers: int = Field(default=2, ge=1)
    heads: int = Field(default=2, ge=1)
    ffw_hidden: int = Field(default=64, ge=1)
    mask_mode: Literal["causal", "full", "time_space"] = "causal"
    max_positions: int = Field(default=64, ge=1, description="Positions for causal/full streams")
    tokens_per_frame: int = Field(default=1, ge=1, description="F for time_space streams")
    max_frames: int = Field(default=64, ge=1, description="Frames (time steps) per stream")
    slots_per_step: int = Field(default=4, ge=1, description="Learned input slots per step (slots input)")
    head: Literal["tied", "action_mlp"] = "tied"
    num_actions: int = Field(default=5, ge=1)
    mlp_hidden: int = Field(default=64, ge=1)

    @model_validator(mode="after")
    def check_heads(self):
        if self.embed_dim % self.heads != 0:
            raise ValueError(f"heads ({self.heads}) must divide embed_dim ({self.embed_dim})")
        if self.input_kind == "slots" and self.head == "tied":
            raise ValueError("slot-input models have no vocabulary to tie a head to")
        return self

# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Typed hyperparameters for optimisation and guidance.
"""

from pydantic import BaseModel, ConfigDict, Field


class CfgPolicyConfig(BaseModel):
    """Classifier-free guidance settings."""

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    lambda_: float = Field(default=0.5, ge=0.0, alias="lambda", description="Guidance strength")
    mask_prob: float = Field(
        default=0.02,
        ge=0.0,
        le=1.0,
        description="Probability of dropping the instruction during training",
    )


class AdamConfig(BaseModel):
    """Adam hyperparameters with a linear warm-up."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    lr: float = Field(default=1e-4, gt=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    warmup_steps: int = Field(default=100, ge=0)

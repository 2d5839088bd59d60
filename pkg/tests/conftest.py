# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Pytest configuration and fixtures for GATS engine tests.
"""

from typing import Any, Dict

import numpy as np
import pytest

from gats_engine.components.transformer import ComponentModel
from gats_engine.config.settings import PRESET_DEFAULTS, RunConfig, deep_merge, validate_run_config
from gats_engine.harness.dataset import collect_episodes
from gats_engine.harness.env import GridEnv
from gats_engine.models.component_models import ComponentSpec
from gats_engine.models.gats_models import GatsConfig, ModalitySpec

TINY_WIDTH = {"embed_dim": 8, "heads": 2, "ffw_hidden": 16}
TINY_GRID = 5
TINY_HORIZON = 16


def tiny_run_config(preset: str = "agent3", **updates: Dict[str, Any]) -> RunConfig:
    """Preset defaults shrunk to test size; ``updates`` are merged section by section."""
    base = {
        "preset": preset,
        "gats": {"d": 8, "heads": 2, "ffw_hidden": 16},
        "components": {
            "language": {"num_layers": 3, **TINY_WIDTH},
            "vision": {"num_layers": 2, **TINY_WIDTH},
            "action": {"num_layers": 2, **TINY_WIDTH, "frozen": False},
        },
        "harness": {"grid_size": TINY_GRID, "horizon": TINY_HORIZON, "episodes": 4, "eval_episodes": 2},
        "training": {"batch_size": 2, "steps": 2, "warmup_steps": 0, "pretrain_steps": 2, "checkpoint_every": 0},
    }
    if preset in ("agent3", "agent3_twoview"):
        base["gats"]["context"] = {"language": 6, "vision": TINY_GRID**2, "action": 8}
        if preset == "agent3_twoview":
            base["gats"]["context"]["view2"] = 9
    if preset == "cross_attention":
        base["components"] = {"language": {"num_layers": 4, **TINY_WIDTH}}
    if preset == "bimodal":
        base["components"].pop("action")
    return validate_run_config(deep_merge(PRESET_DEFAULTS[preset], deep_merge(base, updates)))


@pytest.fixture
def rng():
    """Seeded generator; every test starts from the same stream."""
    return np.random.default_rng(0)


@pytest.fixture
def agent_config():
    return tiny_run_config("agent3")


@pytest.fixture
def twoview_config():
    return tiny_run_config("agent3_twoview")


@pytest.fixture
def bimodal_config():
    return tiny_run_config("bimodal")


@pytest.fixture
def tiny_env():
    return GridEnv(TINY_GRID, TINY_HORIZON)


@pytest.fixture
def tiny_episodes(tiny_env):
    """Two successful expert episodes on the small grid."""
    return collect_episodes(tiny_env, 2, seed=3)


@pytest.fixture
def language_model(rng):
    """Causal token model, 3 layers, width 8."""
    spec = ComponentSpec(name="language", vocab_size=20, num_layers=3, max_positions=16, **TINY_WIDTH)
    return ComponentModel(spec, rng)


@pytest.fixture
def clip_model(rng):
    """Time-space token model over 4-token frames."""
    spec = ComponentSpec(
        name="vision",
        vocab_size=10,
        num_layers=3,
        mask_mode="time_space",
        tokens_per_frame=4,
        max_frames=6,
        **TINY_WIDTH,
    )
    return ComponentModel(spec, rng)


@pytest.fixture
def two_modality_config():
    """Steered modality ``a`` (width 6) next to non-steered ``b`` (width 4); gates open at 0.5."""
    return GatsConfig(
        modalities=[
            ModalitySpec(modality_id=1, name="a", embed_dim=6, context_len=2, steered=True),
            ModalitySpec(modality_id=2, name="b", embed_dim=4, context_len=3, steered=False),
        ],
        d=8,
        num_layers=1,
        heads=2,
        ffw_hidden=16,
        gate_init_bias=0.0,
    )

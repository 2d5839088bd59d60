# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Run configuration for the GATS engine.

A run is described by one YAML document validated into :class:`RunConfig`.
Unknown keys are rejected at every level. Command line flags override file
values; ``--preset`` alone (no file) starts from the preset's built-in defaults.
"""

import copy
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from gats_engine.core.exceptions import ConfigurationError
from gats_engine.models.training_models import AdamConfig, CfgPolicyConfig

PresetName = Literal["cross_attention", "agent3", "agent3_twoview", "bimodal"]
PRESETS = ("cross_attention", "agent3", "agent3_twoview", "bimodal")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GatsSection(_Section):
    """GATS hyperparameters; ``None`` fields fall back to the preset default."""

    d: int = Field(default=32, ge=1)
    num_layers: Optional[int] = Field(default=None, ge=1, description="K")
    heads: int = Field(default=4, ge=1)
    ffw_hidden: int = Field(default=64, ge=1)
    gate_init_bias: float = -10.0
    force_zero_gates: bool = False
    context: Dict[str, int] = Field(default_factory=dict, description="Modality name -> N_m")
    steered: Optional[List[str]] = Field(default=None, description="Steered modality names (S)")


class ComponentSection(_Section):
    num_layers: int = Field(ge=1)
    embed_dim: int = Field(default=32, ge=1)
    heads: int = Field(default=4, ge=1)
    ffw_hidden: int = Field(default=64, ge=1)
    vocab_size: int = Field(default=32, ge=1)
    frozen: bool = True


class TrainingSection(_Section):
    lr: float = Field(default=1e-4, gt=0.0)
    warmup_steps: int = Field(default=100, ge=0)
    batch_size: int = Field(default=32, ge=1)
    steps: int = Field(default=1000, ge=0)
    pretrain_steps: int = Field(default=600, ge=0)
    pretrain_lr: float = Field(default=3e-3, gt=0.0)
    pretrain_loss_threshold: Optional[float] = Field(default=None, gt=0.0)
    checkpoint_every: int = Field(default=500, ge=0)
    masked_loss_weight: float = Field(default=1.0, ge=0.0)
    caption_loss_weight: float = Field(default=1.0, ge=0.0)
    target_smoothing: int = Field(default=10, ge=1, description="Window for steps-to-target")

    def adam(self) -> AdamConfig:
        return AdamConfig(lr=self.lr, warmup_steps=self.warmup_steps)

    def pretrain_adam(self) -> AdamConfig:
        return AdamConfig(lr=self.pretrain_lr, warmup_steps=min(self.warmup_steps, self.pretrain_steps // 10))


class HarnessSection(_Section):
    grid_size: int = Field(default=7, ge=4)
    horizon: int = Field(default=40, ge=1)
    episodes: int = Field(default=10000, ge=0)
    eval_episodes: int = Field(default=500, ge=0)
    second_view: bool = False
    mask_language: bool = False


class CrossAttentionSection(_Section):
    num_features: int = Field(default=4, ge=0, description="V")
    feature_dim: int = Field(default=24, ge=1)
    image_position_token: bool = False
    generate_tokens: int = Field(default=6, ge=0)


class PathsSection(_Section):
    out_dir: str = "runs"
    dataset: Optional[str] = None
    metrics: Optional[str] = None
    checkpoint: Optional[str] = None
    components: Optional[str] = Field(default=None, description="Pretrained component checkpoint")


class RunConfig(_Section):
    """Complete, validated description of a run."""

    preset: PresetName = "agent3"
    seed: int = 0
    gats: GatsSection = Field(default_factory=GatsSection)
    components: Dict[str, ComponentSection] = Field(default_factory=dict)
    training: TrainingSection = Field(default_factory=TrainingSection)
    guidance: CfgPolicyConfig = Field(default_factory=CfgPolicyConfig)
    harness: HarnessSection = Field(default_factory=HarnessSection)
    cross_attention: CrossAttentionSection = Field(default_factory=CrossAttentionSection)
    paths: PathsSection = Field(default_factory=PathsSection)

    def component(self, name: str) -> ComponentSection:
        try:
            return self.components[name]
        except KeyError:
            raise ConfigurationError(f"preset '{self.preset}' needs a 'components.{name}' section") from None


_LANGUAGE = {"num_layers": 6, "embed_dim": 32, "heads": 4, "ffw_hidden": 64, "vocab_size": 32}
_VISION = {"num_layers": 4, "embed_dim": 32, "heads": 4, "ffw_hidden": 64, "vocab_size": 16}
_ACTION = {"num_layers": 2, "embed_dim": 32, "heads": 4, "ffw_hidden": 64, "vocab_size": 1, "frozen": False}

PRESET_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "cross_attention": {
        "preset": "cross_attention",
        "gats": {"d": 32, "context": {"vision": 4, "language": 1}, "steered": ["language"]},
        "components": {"language": _LANGUAGE},
    },
    "agent3": {
        "preset": "agent3",
        "gats": {
            "num_layers": 2,
            "context": {"language": 6, "vision": 49, "action": 8},
            "steered": ["vision", "action"],
        },
        "components": {"language": _LANGUAGE, "vision": _VISION, "action": _ACTION},
        "training": {"batch_size": 8, "steps": 5000, "lr": 1e-3},
    },
    "agent3_twoview": {
        "preset": "agent3_twoview",
        "gats": {
            "num_layers": 2,
            "context": {"language": 6, "vision": 49, "view2": 9, "action": 8},
            "steered": ["vision", "view2", "action"],
        },
        "components": {"language": _LANGUAGE, "vision": _VISION, "action": _ACTION},
        "training": {"batch_size": 8, "steps": 5000, "lr": 1e-3},
        "harness": {"second_view": True},
    },
    "bimodal": {
        "preset": "bimodal",
        "gats": {"num_layers": 2, "context": {"language": 16, "vision": 49}, "steered": ["language", "vision"]},
        "components": {"language": _LANGUAGE, "vision": _VISION},
        "training": {"batch_size": 8, "steps": 1000, "lr": 1e-3},
    },
}


def deep_merge(base: Mapping[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    """Recursively merge ``update`` into a copy of ``base``."""
    merged = copy.deepcopy(dict(base))
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def validate_run_config(data: Mapping[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigurationError(f"invalid run configuration: {problems}") from None


def default_run_config(preset: str) -> RunConfig:
    """Built-in configuration of a preset."""
    if preset not in PRESET_DEFAULTS:
        raise ConfigurationError(f"unknown preset '{preset}'; choose one of {', '.join(PRESETS)}")
    return validate_run_config(PRESET_DEFAULTS[preset])


def load_config_from_file(config_file: str) -> RunConfig:
    """
    Load a run configuration from a YAML file.

    The file is merged over the defaults of the preset it names.

    Parameters
    ----------
    config_file : str
        Path to the configuration YAML file

    Returns
    -------
    RunConfig
        Parsed run configuration

    Raises
    ------
    ConfigurationError
        If the file cannot be read, parsed or validated
    """
    try:
        config_path = Path(config_file).expanduser().resolve()
        with open(config_path, "r") as file:
            config_data = yaml.safe_load(file) or {}
    except FileNotFoundError:
        raise ConfigurationError(f"Configuration file not found: {config_file}")
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Error parsing YAML file: {e}")

    if not isinstance(config_data, Mapping):
        raise ConfigurationError(f"Configuration file {config_file} must hold a mapping")
    preset = config_data.get("preset", "agent3")
    base = PRESET_DEFAULTS.get(preset, {"preset": preset})
    return validate_run_config(deep_merge(base, config_data))


def apply_overrides(config: RunConfig, overrides: Mapping[str, Any]) -> RunConfig:
    """
    Apply command line overrides.

    Recognised keys: ``seed``, ``steps``, ``lambda``, ``out``, ``freeze``,
    ``no_steer``, ``force_zero_gates``. ``None`` values are ignored.
    """
    data = config.model_dump(by_alias=True)
    if overrides.get("seed") is not None:
        data["seed"] = int(overrides["seed"])
    if overrides.get("steps") is not None:
        data["training"]["steps"] = int(overrides["steps"])
    if overrides.get("lambda") is not None:
        data["guidance"]["lambda"] = float(overrides["lambda"])
    if overrides.get("out") is not None:
        data["paths"]["out_dir"] = str(overrides["out"])
    if overrides.get("force_zero_gates"):
        data["gats"]["force_zero_gates"] = True
    for name in overrides.get("freeze") or ():
        if name not in data["components"]:
            raise ConfigurationError(f"--freeze names unknown component '{name}'")
        data["components"][name]["frozen"] = True
    no_steer = set(overrides.get("no_steer") or ())
    if no_steer:
        steered = data["gats"]["steered"] or []
        unknown = no_steer - set(steered)
        if unknown:
            raise ConfigurationError(f"--no-steer names modalities that are not steered: {sorted(unknown)}")
        data["gats"]["steered"] = [m for m in steered if m not in no_steer]
    return validate_run_config(data)


def resolve_run_config(config_file: Optional[str], preset: Optional[str]) -> RunConfig:
    """File (or ``GATS_CONFIG_FILE``) if given, else the preset's defaults; ``preset`` must agree with the file."""
    config_file = config_file or os.getenv("GATS_CONFIG_FILE")
    if config_file:
        config = load_config_from_file(config_file)
        if preset is not None and preset != config.preset:
            raise ConfigurationError(f"--preset {preset} conflicts with preset '{config.preset}' in {config_file}")
        return config
    return default_run_config(preset or "agent3")


def get_run_params() -> Dict[str, List[Any]]:
    """
    Shared command line parameters.

    Returns
    -------
    dict
        Parameter name -> [flag, ..., default, help]
    """
    return {
        "config": [
            "--config",
            os.getenv("GATS_CONFIG_FILE"),
            "Path to a run configuration YAML file.",
        ],
        "preset": [
            "--preset",
            None,
            f"Preset name ({', '.join(PRESETS)}); used alone, starts from built-in defaults.",
        ],
        "seed": ["--seed", None, "Random seed; overrides the configuration."],
        "steps": ["--steps", None, "Number of training steps; overrides the configuration."],
        "lambda": ["--lambda", None, "Classifier-free guidance strength."],
        "out": ["--out", None, "Output directory for checkpoints and metrics."],
        "log_level": [
            "--log-level",
            os.getenv("GATS_LOG_LEVEL", "INFO"),
            "Logging level (DEBUG, INFO, WARNING, ERROR).",
        ],
    }

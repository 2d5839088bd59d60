# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Input validation utilities for the command line surface.
"""

from pathlib import Path
from typing import Optional, Sequence

from gats_engine.config.settings import RunConfig
from gats_engine.core.exceptions import ConfigurationError, MissingArgumentsException


def validate_preset(config: RunConfig, allowed: Sequence[str], command: str) -> str:
    """
    Check that ``command`` supports the configured preset.

    Raises
    ------
    ConfigurationError
        If the preset is not in ``allowed``
    """
    if config.preset not in allowed:
        raise ConfigurationError(
            f"'{command}' works with presets {', '.join(allowed)}; the configuration uses '{config.preset}'"
        )
    return config.preset


def validate_existing_file(path: Optional[str], description: str) -> Path:
    """
    Resolve ``path`` and check that it exists.

    Raises
    ------
    MissingArgumentsException
        If no path was given
    ConfigurationError
        If the file does not exist
    """
    if path is None:
        raise MissingArgumentsException([description])
    resolved = Path(path).expanduser().resolve()
    if not resolved.is_file():
        raise ConfigurationError(f"{description} not found: {path}")
    return resolved

# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Unit tests for validation utilities.
"""

import pytest

from gats_engine.config.settings import default_run_config
from gats_engine.core.exceptions import ConfigurationError, MissingArgumentsException
from gats_engine.utils.validators import validate_existing_file, validate_preset


class TestValidatePreset:
    """Test command/preset compatibility checks."""

    def test_allowed(self):
        assert validate_preset(default_run_config("agent3"), ["agent3", "agent3_twoview"], "evaluate") == "agent3"

    def test_rejected(self):
        with pytest.raises(ConfigurationError, match="'evaluate' works with presets agent3"):
            validate_preset(default_run_config("bimodal"), ["agent3"], "evaluate")


class TestValidateExistingFile:
    """Test file argument resolution."""

    def test_existing(self, tmp_path):
        path = tmp_path / "run.ckpt"
        path.write_bytes(b"")
        assert validate_existing_file(str(path), "checkpoint") == path.resolve()

    def test_missing_path(self, tmp_path):
        with pytest.raises(ConfigurationError, match="checkpoint not found"):
            validate_existing_file(str(tmp_path / "absent.ckpt"), "checkpoint")

    def test_no_path(self):
        with pytest.raises(MissingArgumentsException) as err:
            validate_existing_file(None, "--checkpoint")
        assert err.value.missing == ["--checkpoint"]
        assert "--checkpoint" in str(err.value)

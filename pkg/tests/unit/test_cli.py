# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Unit tests for the command line surface.
"""

import pytest
import yaml

from gats_engine.cli import main
from gats_engine.core.metrics import MetricsWriter
from gats_engine.harness.dataset import read_dataset
from tests.conftest import tiny_run_config


@pytest.fixture(autouse=True)
def no_config_from_environment(monkeypatch):
    monkeypatch.delenv("GATS_CONFIG_FILE", raising=False)


@pytest.fixture
def tiny_config_file(tmp_path):
    """Small agent configuration writing everything under ``tmp_path``."""
    data = tiny_run_config("agent3", harness={"episodes": 3, "eval_episodes": 1}).model_dump(by_alias=True)
    data["paths"] = {"out_dir": str(tmp_path / "run"), "dataset": str(tmp_path / "episodes.gatsdata")}
    path = tmp_path / "agent.yaml"
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


class TestInspectPlan:
    """Test plan printing."""

    def test_agent_preset_plan(self, capsys):
        assert main(["inspect-plan", "--preset", "agent3"]) == 0
        out = capsys.readouterr().out
        assert "models: language vision action" in out
        assert "1: 3 2 1" in out and "2: 5 3 1" in out

    def test_explicit_depths(self, capsys):
        assert main(["inspect-plan", "--layers", "6", "4", "2", "--K", "2"]) == 0
        assert capsys.readouterr().out.splitlines()[1:] == ["1: 3 2 1", "2: 5 3 1"]

    def test_plan_error_exit_code(self, capsys):
        assert main(["inspect-plan", "--layers", "6", "1", "--K", "2"]) == 2
        assert "error[plan]:" in capsys.readouterr().err


class TestCommands:
    """Test dataset generation, error reporting and plotting."""

    def test_gen_data(self, tiny_config_file, tmp_path, capsys):
        assert main(["gen-data", "--config", str(tiny_config_file)]) == 0
        assert "3 episodes" in capsys.readouterr().out
        dataset = read_dataset(tmp_path / "episodes.gatsdata")
        assert len(dataset) == 3 and dataset.header.grid_size == 5

    def test_evaluate_rejects_bimodal(self, tmp_path, capsys):
        assert main(["evaluate", "--preset", "bimodal", "--out", str(tmp_path)]) == 2
        assert "error[config]:" in capsys.readouterr().err

    def test_evaluate_needs_checkpoint(self, tmp_path, capsys):
        assert main(["evaluate", "--preset", "agent3", "--checkpoint", str(tmp_path / "absent.ckpt")]) == 2
        assert "not found" in capsys.readouterr().err

    def test_invalid_config_file(self, tmp_path, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text("preset: agent3\ngats:\n  heads: 0\n", encoding="utf-8")
        assert main(["inspect-plan", "--config", str(path)]) == 2
        assert "gats.heads" in capsys.readouterr().err

    def test_preset_conflict(self, tiny_config_file, capsys):
        assert main(["inspect-plan", "--config", str(tiny_config_file), "--preset", "bimodal"]) == 2
        assert "conflicts" in capsys.readouterr().err

    def test_equivalence_check(self, capsys):
        assert main(["equivalence-check", "--preset", "cross_attention", "--seeds", "1", "--inputs", "2"]) == 0
        out = capsys.readouterr().out
        assert "comparisons: 2" in out and "max_abs_deviation:" in out

    def test_plot(self, tmp_path, capsys):
        metrics = tmp_path / "m.jsonl"
        writer = MetricsWriter(metrics)
        for step in range(1, 4):
            writer.write({"step": step, "loss": 1.0 / step})
        output = tmp_path / "m.png"
        assert main(["plot", "--metrics", str(metrics), "--output", str(output)]) == 0
        assert output.is_file() and output.stat().st_size > 0


@pytest.mark.slow
class TestAgentPipeline:
    """Generate data, train briefly and evaluate through the command line."""

    def test_gen_train_evaluate(self, tiny_config_file, tmp_path, capsys):
        config = str(tiny_config_file)
        assert main(["gen-data", "--config", config]) == 0
        assert main(["train-agent", "--config", config, "--steps", "2"]) == 0
        assert (tmp_path / "run" / "train-agent.ckpt").is_file()
        assert (tmp_path / "run" / "train-agent.metrics.jsonl").is_file()
        assert main(["evaluate", "--config", config, "--lambda", "0.5", "--summary"]) == 0
        out = capsys.readouterr().out
        assert "steps: 2" in out

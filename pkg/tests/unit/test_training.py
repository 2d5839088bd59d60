# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Unit tests for two-pass bimodal training, behaviour cloning and evaluation.
"""

import numpy as np
import pytest

from gats_engine.components.corpora import caption_corpus
from gats_engine.core.exceptions import DatasetError
from gats_engine.core.metrics import MetricsWriter
from gats_engine.harness.bc import bc_train
from gats_engine.harness.evaluate import evaluate, template_table
from gats_engine.models.training_models import AdamConfig, CfgPolicyConfig
from gats_engine.presets.agent import build_agent_preset
from gats_engine.presets.bimodal import build_bimodal_preset
from gats_engine.training.bimodal import (
    BimodalTrainer,
    PairedBatch,
    steps_to_target,
    substitution_experiment,
    two_pass_step,
)
from tests.conftest import tiny_run_config

FAST = AdamConfig(lr=1e-2, warmup_steps=0)


@pytest.fixture
def bimodal(rng):
    return build_bimodal_preset(tiny_run_config("bimodal", gats={"gate_init_bias": 0.0}), rng)


@pytest.fixture
def pairs(rng, tiny_env):
    return caption_corpus(4, rng, tiny_env)


def gats_grads(preset):
    return {name: None if p.grad is None else p.grad.copy() for name, p in preset.bundle.gats.named_parameters()}


class TestTwoPassStep:
    """Test gradient accumulation across the two passes."""

    def test_passes_add_up(self, bimodal, pairs):
        batch = PairedBatch.of(pairs[:2])
        bimodal.bundle.zero_grad()
        both = two_pass_step(bimodal, batch, np.random.default_rng(3), (1.0, 1.0))
        joint = gats_grads(bimodal)

        bimodal.bundle.zero_grad()
        rng = np.random.default_rng(3)
        first = two_pass_step(bimodal, batch, rng, (1.0, 0.0))
        second = two_pass_step(bimodal, batch, rng, (0.0, 1.0))
        split = gats_grads(bimodal)

        assert both.masked_loss == pytest.approx(first.masked_loss)
        assert both.caption_loss == pytest.approx(second.caption_loss)
        assert first.caption_loss is None and second.masked_loss is None
        for name, grad in joint.items():
            if grad is None:
                assert split[name] is None
            else:
                np.testing.assert_allclose(split[name], grad, rtol=1e-10, atol=1e-14)

    def test_zero_weights_skip_work_and_randomness(self, bimodal, pairs):
        rng = np.random.default_rng(8)
        bimodal.bundle.zero_grad()
        losses = two_pass_step(bimodal, PairedBatch.of(pairs[:1]), rng, (0.0, 0.0))
        assert (losses.masked_loss, losses.caption_loss) == (None, None)
        assert rng.random() == np.random.default_rng(8).random()
        assert all(p.grad is None for p in bimodal.bundle.parameters())

    def test_unpaired_batch(self, pairs):
        with pytest.raises(DatasetError, match="unpaired"):
            PairedBatch([pairs[0][0], pairs[1][0]], [pairs[0][1]])
        with pytest.raises(DatasetError):
            PairedBatch([], [])


class TestStepsToTarget:
    """Test the smoothed steps-to-target measure."""

    def test_window_of_one(self):
        assert steps_to_target([5.0, 4.0, 3.0, 2.0], 3.0, window=1) == 3

    def test_smoothed(self):
        assert steps_to_target([5.0, 4.0, 3.0, 2.0, 1.0], 3.0, window=2) == 4

    def test_skipped_steps_and_unreached(self):
        assert steps_to_target([None, 1.0], 2.0, window=2) is None
        assert steps_to_target([None, 1.0, 1.0], 2.0, window=2) == 3
        assert steps_to_target([4.0, 4.0], 1.0) is None


class TestBimodalTrainer:
    """Test optimisation of the paired model."""

    def test_frozen_components_untouched(self, bimodal, pairs, tmp_path):
        frozen = bimodal.bundle.frozen_hashes()
        gats_before = bimodal.bundle.gats.parameter_hash()
        metrics = MetricsWriter(tmp_path / "m.jsonl")
        history = BimodalTrainer(bimodal, pairs, FAST, np.random.default_rng(1), batch_size=2, metrics=metrics).train(2)
        assert history.steps == 2
        assert set(frozen) == {"language", "vision"}
        assert bimodal.bundle.frozen_hashes() == frozen
        assert bimodal.bundle.gats.parameter_hash() != gats_before
        assert [r["step"] for r in metrics.records] == [1, 2]

    def test_empty_corpus(self, bimodal):
        with pytest.raises(DatasetError):
            BimodalTrainer(bimodal, [], FAST, np.random.default_rng(1))


class TestBehaviourCloning:
    """Test the behaviour-cloning loop."""

    def test_zero_steps_change_nothing(self, agent_config, rng, tiny_episodes):
        preset = build_agent_preset(agent_config, rng)
        before = preset.bundle.parameter_hash()
        result = bc_train(preset, tiny_episodes, 0, CfgPolicyConfig(), rng)
        assert result.steps == 0 and np.isnan(result.final_loss)
        assert preset.bundle.parameter_hash() == before

    def test_needs_episodes(self, agent_config, rng):
        with pytest.raises(DatasetError):
            bc_train(build_agent_preset(agent_config, rng), [], 1, CfgPolicyConfig(), rng)

    def test_updates_trainable_parts_only(self, agent_config, rng, tiny_episodes, tmp_path):
        preset = build_agent_preset(agent_config, rng)
        frozen = preset.bundle.frozen_hashes()
        action_before = preset.action.parameter_hash()
        result = bc_train(
            preset,
            tiny_episodes,
            2,
            CfgPolicyConfig(mask_prob=1.0),
            rng,
            hyper=FAST,
            batch_size=2,
            checkpoint_every=1,
            checkpoint_path=tmp_path / "bundle.ckpt",
        )
        assert result.steps == 2 and len(result.losses) == 2
        assert result.masked_instructions == 4
        assert len(result.checkpoints) == 2
        assert preset.bundle.frozen_hashes() == frozen
        assert preset.action.parameter_hash() != action_before


class TestEvaluate:
    """Test held-out evaluation rows."""

    def test_rows_for_guided_and_unguided(self, agent_config, rng, tiny_env):
        preset = build_agent_preset(agent_config, rng)
        report = evaluate(preset, tiny_env, 1, lam=0.5, seed=2)
        assert [row.lam for row in report.rows] == [0.0, 0.5]
        assert all(row.episodes == 1 for row in report.rows)
        assert report.row(0.5) is report.rows[1] and report.row(2.0) is None
        assert sum(total for _, _, total in template_table(report.rows[0])) == 1

    def test_single_row_without_guidance(self, agent_config, rng, tiny_env):
        report = evaluate(build_agent_preset(agent_config, rng), tiny_env, 1, lam=0.0)
        assert [row.lam for row in report.rows] == [0.0]


@pytest.mark.slow
class TestLongerRuns:
    """Short end-to-end training runs."""

    def test_substitution_experiment(self, bimodal, rng, tiny_env):
        corpus = caption_corpus(32, rng, tiny_env)
        swapped, result = substitution_experiment(bimodal, corpus, FAST, rng, steps=12, batch_size=2, window=3)
        assert result.original_steps is not None
        assert result.report.new_gats_parameters == result.report.old_gats_parameters
        assert swapped.vision.frozen and swapped.language.frozen
        assert result.substituted.steps == 12

    def test_behaviour_cloning_reduces_loss(self, agent_config, rng, tiny_episodes):
        preset = build_agent_preset(agent_config, rng)
        result = bc_train(preset, tiny_episodes, 40, CfgPolicyConfig(), rng, hyper=FAST, batch_size=2)
        assert np.mean(result.losses[-5:]) < np.mean(result.losses[:5])

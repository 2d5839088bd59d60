# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Unit tests for the cross-attention, agent and bimodal presets.
"""

import numpy as np
import pytest

from gats_engine.components.transformer import ComponentModel
from gats_engine.core.exceptions import ConfigurationError, GatherError, ShapeMismatchError
from gats_engine.core.tensor import Tape
from gats_engine.gats.composer import substitute_gats
from gats_engine.harness.env import Template
from gats_engine.harness.vocab import instruction_tokens
from gats_engine.models.component_models import ComponentSpec
from gats_engine.presets.agent import (
    ACTION_ID,
    VIEW2_ID,
    add_second_view,
    build_agent_preset,
    episode_layout,
)
from gats_engine.presets.cross_attention import build_cross_attention_preset, insertion_points
from gats_engine.presets.equivalence import equivalence_check
from tests.conftest import TINY_WIDTH, tiny_run_config

PUSH_RED = instruction_tokens(Template(0, 0, 0))
PUSH_BLUE = instruction_tokens(Template(2, 1, 3))


def language(rng, num_layers=6):
    spec = ComponentSpec(name="language", vocab_size=20, num_layers=num_layers, max_positions=16, **TINY_WIDTH)
    return ComponentModel(spec, rng)


class TestCrossAttention:
    """Test GATS in its cross-attention configuration."""

    def test_matches_reference_adapter_model(self):
        report = equivalence_check(seeds=2, inputs_per_seed=3, width=16, heads=2, num_layers=4, feature_dim=12)
        assert report.comparisons == 6
        assert report.max_abs_deviation < 1e-8

    def test_insertion_points(self, rng):
        preset = build_cross_attention_preset(4, language(rng), 12, rng, num_layers=3, heads=2, ffw_hidden=16)
        assert insertion_points(preset) == [2, 4, 5]

    def test_default_adapter_count_is_half_depth(self, rng):
        preset = build_cross_attention_preset(4, language(rng), 12, rng, heads=2, ffw_hidden=16)
        assert preset.bundle.config.K == 3
        assert preset.language.frozen

    def test_zero_gates_leave_language_model_alone(self, rng):
        model = language(rng)
        preset = build_cross_attention_preset(4, model, 12, rng, heads=2, ffw_hidden=16, force_zero_gates=True)
        text = np.array([2, 5, 7, 3])
        expected, _ = model.forward_with_taps(tokens=text)
        np.testing.assert_allclose(preset.logits(text, rng.normal(size=(4, 12))).data, expected.data, atol=1e-12)

    def test_features_steer_the_text(self, rng):
        preset = build_cross_attention_preset(4, language(rng), 12, rng, heads=2, ffw_hidden=16, gate_init_bias=0.0)
        text = np.array([2, 5, 7])
        a = preset.logits(text, rng.normal(size=(4, 12))).data
        b = preset.logits(text, rng.normal(size=(4, 12))).data
        assert not np.allclose(a, b)

    def test_image_position_token(self, rng):
        preset = build_cross_attention_preset(
            4, language(rng), 12, rng, heads=2, ffw_hidden=16, image_position_token=True
        )
        assert preset.image_position is not None
        assert preset.logits(np.array([2, 5]), rng.normal(size=(4, 12))).shape == (2, 20)

    def test_substitution_freezes_image_position_token(self, rng):
        preset = build_cross_attention_preset(
            4, language(rng), 12, rng, heads=2, ffw_hidden=16, image_position_token=True
        )
        bundle, report = substitute_gats(preset.bundle, preset.bundle.config, rng)
        assert report.trainable_parameters == report.new_gats_parameters
        assert bundle.extras.frozen
        assert not preset.image_position.requires_grad

    def test_substitution_can_keep_image_position_trainable(self, rng):
        preset = build_cross_attention_preset(
            4, language(rng), 12, rng, heads=2, ffw_hidden=16, image_position_token=True
        )
        bundle, report = substitute_gats(preset.bundle, preset.bundle.config, rng, trainable_components=["extras"])
        assert report.trainable_parameters == report.new_gats_parameters + preset.image_position.size
        assert preset.image_position.requires_grad

    def test_generate(self, rng):
        preset = build_cross_attention_preset(4, language(rng), 12, rng, heads=2, ffw_hidden=16)
        tokens = preset.generate(np.array([2, 5]), rng.normal(size=(4, 12)), num_tokens=3)
        assert tokens.shape == (5,)
        np.testing.assert_array_equal(tokens[:2], [2, 5])

    def test_width_must_match_language(self, rng):
        with pytest.raises(ShapeMismatchError, match="identity"):
            build_cross_attention_preset(4, language(rng), 12, rng, d=16, heads=2)

    def test_feature_count_checked(self, rng):
        preset = build_cross_attention_preset(4, language(rng), 12, rng, heads=2, ffw_hidden=16)
        with pytest.raises(ShapeMismatchError):
            preset.logits(np.array([2]), rng.normal(size=(3, 12)))


class TestEpisodeLayout:
    """Test arrival order inside an episode."""

    def test_counts_without_second_view(self):
        layout = episode_layout(3, 25, [(0, PUSH_RED)])
        assert layout.language.tolist() == list(range(6))
        assert layout.vision.size == 75 and layout.action.size == 12 and layout.view2.size == 0
        assert layout.vision[0] == 6
        assert layout.action[:4].tolist() == [31, 32, 33, 34]

    def test_counts_with_second_view(self):
        layout = episode_layout(3, 25, [(0, PUSH_RED)], second_view=True)
        assert layout.total == 111
        assert layout.view2.size == 18

    def test_mid_episode_instruction(self):
        layout = episode_layout(2, 25, [(0, PUSH_RED), (1, PUSH_BLUE)])
        assert layout.language_lengths == [6, 6]
        assert layout.language[6] == 6 + 25 + 4

    def test_rows_are_a_permutation(self):
        layout = episode_layout(4, 25, [(0, PUSH_RED), (2, PUSH_BLUE)], second_view=True)
        rows = np.concatenate([layout.language, layout.vision, layout.view2, layout.action])
        np.testing.assert_array_equal(np.sort(rows), np.arange(layout.total))

    def test_schedule_errors(self):
        with pytest.raises(GatherError):
            episode_layout(3, 25, [(1, PUSH_RED)])
        with pytest.raises(GatherError):
            episode_layout(3, 25, [(0, PUSH_RED), (0, PUSH_BLUE)])


class TestAgentPreset:
    """Test composition, streaming sessions and the second view."""

    def test_action_model_cannot_be_frozen(self, rng):
        config = tiny_run_config("agent3", components={"action": {"frozen": True}})
        with pytest.raises(ConfigurationError, match="frozen"):
            build_agent_preset(config, rng)

    def test_action_must_be_steered(self, rng):
        config = tiny_run_config("agent3", gats={"steered": ["vision"]})
        with pytest.raises(ConfigurationError, match="steered"):
            build_agent_preset(config, rng)

    def test_unknown_modality_in_config(self, rng):
        config = tiny_run_config("agent3", gats={"context": {"audio": 3}})
        with pytest.raises(GatherError):
            build_agent_preset(config, rng)

    def test_logits_per_step(self, agent_config, rng):
        preset = build_agent_preset(agent_config, rng)
        logits = preset.action_logits(rng.integers(8, size=(3, 25)), [(0, PUSH_RED)])
        assert logits.shape == (3, 5)

    def test_second_view_required(self, twoview_config, rng):
        preset = build_agent_preset(twoview_config, rng)
        with pytest.raises(ShapeMismatchError, match="second view"):
            preset.action_logits(rng.integers(8, size=(3, 25)), [(0, PUSH_RED)])
        logits = preset.action_logits(rng.integers(8, size=(3, 25)), [(0, PUSH_RED)], rng.integers(8, size=(2, 9)))
        assert logits.shape == (3, 5)

    def test_session_runs_language_once_per_instruction(self, agent_config, rng):
        session = build_agent_preset(agent_config, rng).session(lam=0.5)
        session.issue(PUSH_RED)
        for _ in range(2):
            session.observe(rng.integers(8, size=25))
            session.act()
        assert session.language_forwards == 1
        session.issue(PUSH_BLUE)
        session.observe(rng.integers(8, size=25))
        session.act()
        assert session.language_forwards == 2
        session.issue(PUSH_RED)
        session.observe(rng.integers(8, size=25))
        assert session.language_forwards == 2
        session.reset()
        assert session.language_forwards == 0 and session.steps == 0

    def test_session_matches_full_forward(self, agent_config, rng):
        preset = build_agent_preset(agent_config, rng)
        frames = rng.integers(8, size=(3, 25))
        expected = preset.action_logits(frames, [(0, PUSH_RED)]).data
        session = preset.session()
        session.issue(PUSH_RED)
        for t in range(3):
            session.observe(frames[t])
            logits = np.log(session.policy())
            np.testing.assert_allclose(logits - logits.max(), expected[t] - expected[t].max(), atol=1e-9)

    def test_observation_needs_instruction(self, agent_config, rng):
        session = build_agent_preset(agent_config, rng).session()
        with pytest.raises(GatherError):
            session.observe(rng.integers(8, size=25))

    def test_masked_language_ignores_instruction(self, rng):
        preset = build_agent_preset(tiny_run_config("agent3", harness={"mask_language": True}), rng)
        frames = rng.integers(8, size=(2, 25))
        a = preset.action_logits(frames, [(0, PUSH_RED)]).data
        b = preset.action_logits(frames, [(0, PUSH_BLUE)]).data
        np.testing.assert_array_equal(a, b)

    def test_add_second_view_keeps_weights(self, agent_config, rng):
        preset = build_agent_preset(agent_config, rng)
        before = preset.bundle.gats.state_dict()
        extended = add_second_view(preset, rng)
        after = extended.bundle.gats.state_dict()
        for name, values in before.items():
            np.testing.assert_array_equal(after[name], values)
        width = d = 8
        per_layer = 2 * width * d + d + 9 * d + d + width + 3 * d + 1
        assert extended.bundle.gats.parameter_count() - preset.bundle.gats.parameter_count() == 2 * per_layer
        assert extended.bundle.config.spec(VIEW2_ID).steered
        with pytest.raises(GatherError):
            add_second_view(extended, rng)

    def test_episode_loss_trains_only_unfrozen_parts(self, agent_config, rng, tiny_episodes):
        preset = build_agent_preset(agent_config, rng)
        with Tape() as tape:
            loss = preset.episode_loss(tiny_episodes[0])
            tape.backward(loss)
        assert np.isfinite(loss.item())
        assert all(p.grad is None for p in preset.language.parameters())
        assert all(p.grad is None for p in preset.vision.parameters())
        assert any(p.grad is not None for p in preset.action.parameters())
        assert any(p.grad is not None for p in preset.bundle.gats.parameters())

    def test_vision_steering_ablation_shrinks_trainable_set(self):
        steered = build_agent_preset(tiny_run_config("agent3"), np.random.default_rng(0))
        ablated = build_agent_preset(tiny_run_config("agent3", gats={"steered": ["action"]}), np.random.default_rng(0))
        assert ablated.bundle.config.steered_ids == (ACTION_ID,)
        assert ablated.bundle.parameter_count(trainable_only=True) < steered.bundle.parameter_count(trainable_only=True)
        assert not any(".r.vision." in name or ".g.vision." in name for name, _ in ablated.bundle.gats.named_parameters())

# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Unit tests for bundles, the joint forward, the activation cache and substitution.
"""

import numpy as np
import pytest

from gats_engine.core.exceptions import GatherError, PlanError, ShapeMismatchError
from gats_engine.gats.composer import (
    ActivationCache,
    GatsBundle,
    ModalityInput,
    build_plan,
    joint_forward,
    measure_token_latency,
    substitute_gats,
)
from gats_engine.gats.layer import GatsModule
from gats_engine.harness.env import GridEnv
from gats_engine.harness.vocab import caption_tokens, instruction_tokens
from gats_engine.models.gats_models import GatsConfig, ModalitySpec
from gats_engine.presets.agent import build_agent_preset
from gats_engine.presets.bimodal import LANGUAGE_ID, VISION_ID, build_bimodal_preset
from tests.conftest import tiny_run_config


@pytest.fixture
def pair():
    env = GridEnv(5, 16)
    state = env.reset(11)
    return caption_tokens(state), env.observe(state)


def bimodal(rng, **gats):
    return build_bimodal_preset(tiny_run_config("bimodal", gats=gats), rng)


class TestJointForward:
    """Test the interleaved forward of several component models."""

    def test_zero_gates_reproduce_standalone_models(self, rng, pair):
        preset = bimodal(rng, force_zero_gates=True)
        caption, frame = pair
        out = joint_forward(preset.bundle, preset.inputs(caption, frame, text_first=True))
        language, _ = preset.language.forward_with_taps(tokens=caption)
        vision, _ = preset.vision.forward_with_taps(tokens=frame)
        np.testing.assert_allclose(out.logits[LANGUAGE_ID].data, language.data, rtol=0, atol=1e-12)
        np.testing.assert_allclose(out.logits[VISION_ID].data, vision.data, rtol=0, atol=1e-12)

    def test_only_steered_models_change(self, rng, pair):
        preset = bimodal(rng, gate_init_bias=0.0)
        caption, frame = pair
        out = joint_forward(preset.bundle, preset.inputs(caption, frame, text_first=True), steer=[VISION_ID])
        language, _ = preset.language.forward_with_taps(tokens=caption)
        vision, _ = preset.vision.forward_with_taps(tokens=frame)
        np.testing.assert_allclose(out.logits[LANGUAGE_ID].data, language.data, rtol=0, atol=1e-12)
        assert not np.allclose(out.logits[VISION_ID].data, vision.data)

    def test_outputs_select_logits(self, rng, pair):
        preset = bimodal(rng)
        out = joint_forward(preset.bundle, preset.inputs(*pair, text_first=False), outputs=[LANGUAGE_ID])
        assert list(out.logits) == [LANGUAGE_ID]
        assert set(out.streams) == {LANGUAGE_ID, VISION_ID}

    def test_undeclared_modality(self, rng, pair):
        preset = bimodal(rng)
        inputs = preset.inputs(*pair, text_first=True)
        inputs[9] = ModalityInput.of_tokens(9, np.array([1]), np.array([500]))
        with pytest.raises(GatherError, match="does not declare"):
            joint_forward(preset.bundle, inputs)

    def test_foreign_plan_rejected(self, rng, pair):
        preset = bimodal(rng)
        with pytest.raises(PlanError):
            joint_forward(preset.bundle, preset.inputs(*pair, text_first=True), plan=build_plan(3, [3, 2]))

    def test_later_steps_do_not_reach_earlier_actions(self, rng):
        preset = build_agent_preset(tiny_run_config("agent3", gats={"gate_init_bias": 0.0}), rng)
        frames = rng.integers(8, size=(4, 25))
        instruction = [(0, instruction_tokens(GridEnv(5, 16).reset(2).template))]
        full = preset.action_logits(frames, instruction).data
        changed = frames.copy()
        changed[3] = (changed[3] + 1) % 8
        np.testing.assert_allclose(preset.action_logits(changed, instruction).data[:3], full[:3], atol=1e-12)
        np.testing.assert_allclose(preset.action_logits(frames[:2], instruction).data, full[:2], atol=1e-12)

    def test_token_latency_is_positive(self, rng, pair):
        preset = bimodal(rng)
        seconds = measure_token_latency(preset.bundle, preset.inputs(*pair, text_first=True), VISION_ID, repeats=2)
        assert seconds > 0.0


class TestActivationCache:
    """Test reuse of frozen, non-steered forwards."""

    def test_cached_forward_is_identical(self, rng, pair):
        preset = bimodal(rng, gate_init_bias=0.0)
        cache = ActivationCache()
        plain = preset.text_first(*pair)
        first = preset.text_first(*pair, cache=cache)
        second = preset.text_first(*pair, cache=cache)
        assert cache.forward_count == 1
        assert cache.hits == 1
        np.testing.assert_allclose(first.logits[VISION_ID].data, plain.logits[VISION_ID].data, atol=1e-12)
        np.testing.assert_array_equal(second.logits[VISION_ID].data, first.logits[VISION_ID].data)

    def test_steered_models_bypass_cache(self, rng, pair):
        preset = bimodal(rng)
        cache = ActivationCache()
        joint_forward(preset.bundle, preset.inputs(*pair, text_first=True), cache=cache)
        assert cache.forward_count == 0

    def test_parameter_change_invalidates(self, language_model):
        language_model.freeze()
        cache = ActivationCache()
        tokens = np.array([1, 2, 3])
        cache.lookup(language_model, tokens)
        language_model.p("final_ln.gain").data = language_model.p("final_ln.gain").data * 2.0
        cache.lookup(language_model, tokens)
        assert cache.forward_count == 2
        assert cache.hits == 0

    def test_lru_bound(self, language_model):
        cache = ActivationCache(max_entries=2)
        for t in range(4):
            cache.lookup(language_model, np.array([t]))
        assert len(cache) == 2


class TestBundle:
    """Test bundle construction and GATS substitution."""

    def test_width_mismatch(self, rng):
        preset = bimodal(rng)
        config = GatsConfig(
            modalities=[
                ModalitySpec(modality_id=LANGUAGE_ID, name="language", embed_dim=6, context_len=4, steered=True),
                ModalitySpec(modality_id=VISION_ID, name="vision", embed_dim=8, context_len=4),
            ],
            d=8,
            heads=2,
        )
        models = {name: model for name, model in preset.bundle.components}
        with pytest.raises(ShapeMismatchError):
            GatsBundle(GatsModule(config, rng), models, {LANGUAGE_ID: "language", VISION_ID: "vision"})

    def test_bindings_must_cover_config(self, rng):
        preset = bimodal(rng)
        models = {name: model for name, model in preset.bundle.components}
        with pytest.raises(GatherError):
            GatsBundle(GatsModule(preset.bundle.config, rng), models, {LANGUAGE_ID: "language"})

    def test_substitution_keeps_components_and_resets_gats(self, rng):
        preset = bimodal(rng)
        old = preset.bundle
        hashes = {name: model.parameter_hash() for name, model in old.components}
        bundle, report = substitute_gats(old, old.config.model_copy(update={"num_layers": 1}), rng)
        assert report.old_gats_parameters == 2 * report.new_gats_parameters
        assert report.trainable_parameters == bundle.gats.parameter_count()
        assert report.frozen_parameters == bundle.components.parameter_count()
        for name, model in bundle.components:
            assert model is old.components[name]
            assert model.parameter_hash() == hashes[name]
        assert bundle.plan.K == 1

    def test_substitution_can_unfreeze(self, rng):
        preset = bimodal(rng)
        bundle, report = substitute_gats(preset.bundle, preset.bundle.config, rng, trainable_components=["vision"])
        assert not bundle.components["vision"].frozen
        assert bundle.components["language"].frozen
        assert report.trainable_parameters == bundle.gats.parameter_count() + bundle.components["vision"].parameter_count()

    def test_substitution_needs_same_modalities(self, rng):
        preset = bimodal(rng)
        other = GatsConfig(
            modalities=[ModalitySpec(modality_id=LANGUAGE_ID, name="text", embed_dim=8, context_len=2, steered=True)],
            d=8,
            heads=2,
        )
        with pytest.raises(GatherError, match="mismatch"):
            substitute_gats(preset.bundle, other, rng)

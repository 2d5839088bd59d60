# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Unit tests for component transformers and their pretraining helpers.
"""

import numpy as np
import pytest

from gats_engine.components.corpora import caption_corpus, clip_corpus, instruction_corpus
from gats_engine.components.pretrain import mask_tokens, next_token_accuracy, next_token_targets, pretrain_component
from gats_engine.components.transformer import ComponentModel, build_factorized_mask
from gats_engine.core.exceptions import ShapeMismatchError, VocabularyRangeError
from gats_engine.core.ops import IGNORE_INDEX
from gats_engine.core.tensor import Tensor
from gats_engine.harness.env import MASK, GridEnv
from gats_engine.harness.vocab import NULL_ID
from gats_engine.models.component_models import ComponentSpec
from gats_engine.models.training_models import AdamConfig


class TestTaps:
    """Test that taps and injection expose every layer boundary."""

    def test_injecting_own_taps_is_a_no_op(self, language_model):
        tokens = np.array([3, 1, 4, 1, 5])
        logits, taps = language_model.forward_with_taps(tokens=tokens)
        assert sorted(taps) == [0, 1, 2, 3]
        for layer in range(3):
            injected, _ = language_model.forward_with_taps(tokens=tokens, inject={layer: taps[layer]})
            np.testing.assert_array_equal(injected.data, logits.data)

    def test_run_layers_matches_taps(self, language_model):
        tokens = np.array([2, 7, 1])
        _, taps = language_model.forward_with_taps(tokens=tokens)
        h, layout = language_model.embed(tokens=tokens)
        np.testing.assert_allclose(language_model.run_layers(h, 0, 2, layout).data, taps[2].data)

    def test_injection_shape_checked(self, language_model):
        with pytest.raises(ShapeMismatchError):
            language_model.forward_with_taps(tokens=np.array([1, 2]), inject={1: Tensor(np.zeros((3, 8)))})


class TestMasks:
    """Test causal and time-space attention."""

    def test_causal_prefix_invariance(self, language_model):
        a, _ = language_model.forward_with_taps(tokens=np.array([1, 2, 3, 4]))
        b, _ = language_model.forward_with_taps(tokens=np.array([1, 2, 3, 9]))
        np.testing.assert_allclose(a.data[:3], b.data[:3])
        assert not np.allclose(a.data[3], b.data[3])

    def test_factorized_mask_layers(self):
        spatial = build_factorized_mask(frame_size=2, num_frames=2, layer_index=0)
        temporal = build_factorized_mask(frame_size=2, num_frames=2, layer_index=1)
        np.testing.assert_array_equal(
            spatial, np.array([[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1], [0, 0, 1, 1]], dtype=bool)
        )
        np.testing.assert_array_equal(
            temporal, np.array([[1, 0, 0, 0], [0, 1, 0, 0], [1, 0, 1, 0], [0, 1, 0, 1]], dtype=bool)
        )

    def test_batched_time_space_matches_dense(self, clip_model, rng):
        frames = rng.integers(10, size=(3, 4))
        fast, _ = clip_model.forward_with_taps(tokens=frames)
        dense, _ = clip_model.forward_with_taps(tokens=frames, dense=True)
        np.testing.assert_allclose(fast.data, dense.data, atol=1e-12)

    def test_later_frames_do_not_leak(self, clip_model, rng):
        frames = rng.integers(10, size=(3, 4))
        changed = frames.copy()
        changed[2] = (changed[2] + 1) % 10
        a, _ = clip_model.forward_with_taps(tokens=frames)
        b, _ = clip_model.forward_with_taps(tokens=changed)
        np.testing.assert_allclose(a.data[:8], b.data[:8])


class TestComponentModel:
    """Test inputs, readout and identity of component models."""

    def test_out_of_vocabulary(self, language_model):
        with pytest.raises(VocabularyRangeError):
            language_model.forward_with_taps(tokens=np.array([1, 20]))

    def test_too_long(self, language_model):
        with pytest.raises(ShapeMismatchError):
            language_model.embed(tokens=np.zeros(17, dtype=np.int64))

    def test_action_head(self, rng):
        spec = ComponentSpec(name="action", input_kind="slots", head="action_mlp", embed_dim=8, heads=2, num_layers=2)
        model = ComponentModel(spec, rng)
        logits, _ = model.forward_with_taps(num_steps=3)
        assert logits.shape == (3, 5)

    def test_slot_model_cannot_tie(self):
        with pytest.raises(ValueError):
            ComponentSpec(name="action", input_kind="slots", head="tied")

    def test_freeze_and_fingerprint(self, language_model):
        before = language_model.fingerprint()
        language_model.freeze()
        assert language_model.parameter_count(trainable_only=True) == 0
        assert language_model.fingerprint() == before
        language_model.p("final_ln.bias").data = language_model.p("final_ln.bias").data + 1.0
        assert language_model.fingerprint() != before

    def test_prefix_rows_shift_positions(self, language_model):
        prefix = Tensor(np.zeros((1, 8)))
        logits, taps = language_model.forward_with_taps(tokens=np.array([1, 2]), prefix=prefix)
        assert logits.shape == (3, 20)
        assert taps[0].shape == (3, 8)


class TestPretrainHelpers:
    """Test objectives and corpora."""

    def test_next_token_targets(self):
        np.testing.assert_array_equal(next_token_targets(np.array([4, 5, 6])), [5, 6, IGNORE_INDEX])

    def test_mask_tokens(self, rng):
        tokens = np.arange(50) % 8
        masked, targets = mask_tokens(tokens, rng, MASK, rate=0.5)
        chosen = masked == MASK
        assert 0 < chosen.sum() < 50
        np.testing.assert_array_equal(targets[chosen], tokens[chosen])
        assert np.all(targets[~chosen] == IGNORE_INDEX)

    def test_instruction_corpus_has_null_sequences(self, rng):
        corpus = instruction_corpus(200, rng)
        assert any(np.all(seq == NULL_ID) for seq in corpus)
        assert all(seq.size == 6 for seq in corpus)

    def test_caption_pairs(self, rng):
        env = GridEnv(5, 16)
        pairs = caption_corpus(3, rng, env)
        assert all(frame.shape == (25,) and caption[0] != caption[-1] for caption, frame in pairs)

    def test_clips_are_framed(self, rng):
        clips = clip_corpus(4, rng, GridEnv(5, 16), max_frames=3)
        assert all(c.ndim == 2 and c.shape[1] == 25 and 1 <= c.shape[0] <= 3 for c in clips)


@pytest.mark.slow
class TestPretraining:
    """Short pretraining runs."""

    def test_language_model_memorises_tiny_corpus(self, language_model, rng):
        corpus = [np.array([2, 5, 6, 7, 3]), np.array([2, 8, 9, 10, 3])]
        result = pretrain_component(
            language_model,
            corpus,
            steps=150,
            objective="next_token",
            rng=rng,
            hyper=AdamConfig(lr=1e-2, warmup_steps=0),
            batch_size=2,
        )
        assert result.steps == 150
        assert np.mean(result.losses[-10:]) < 0.5 * np.mean(result.losses[:10])
        assert next_token_accuracy(language_model, corpus) >= 0.75

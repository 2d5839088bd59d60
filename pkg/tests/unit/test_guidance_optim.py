# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Unit tests for classifier-free guidance and the Adam optimiser.
"""

import numpy as np
import pytest

from gats_engine.core.exceptions import GuidanceError, ShapeMismatchError
from gats_engine.core.tensor import Tensor
from gats_engine.harness.vocab import null_instruction
from gats_engine.models.training_models import AdamConfig
from gats_engine.training.guidance import cfg_train_mask, guided_logits, guided_policy, mask_rate
from gats_engine.training.optim import AdamState, adam_step, global_grad_norm, learning_rate
from tests.oracles import adam_first_step, guided_distribution

NULL = null_instruction()


class TestGuidedPolicy:
    """Test the guided action distribution."""

    @pytest.mark.parametrize("lam", [0.0, 0.5, 1.0, 3.0])
    def test_matches_oracle(self, rng, lam):
        l_cond = rng.normal(size=5)
        l_uncond = rng.normal(size=5)
        expected = guided_distribution(l_cond.tolist(), l_uncond.tolist(), lam)
        np.testing.assert_allclose(guided_policy(l_cond, l_uncond, lam), expected, atol=1e-12)

    def test_zero_strength_ignores_unconditional(self, rng):
        l_cond = rng.normal(size=(2, 5))
        a = guided_policy(l_cond, rng.normal(size=(2, 5)), 0.0)
        b = guided_policy(l_cond, rng.normal(size=(2, 5)), 0.0)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_allclose(a.sum(axis=-1), 1.0)

    def test_equal_branches_are_unguided(self, rng):
        logits = rng.normal(size=5)
        np.testing.assert_allclose(guided_logits(logits, logits, 2.0), logits)

    def test_negative_strength(self):
        with pytest.raises(GuidanceError, match=">= 0"):
            guided_policy(np.zeros(5), np.zeros(5), -0.1)

    def test_shape_mismatch(self):
        with pytest.raises(GuidanceError):
            guided_policy(np.zeros(5), np.zeros(4), 1.0)


class TestTrainingMask:
    """Test per-episode instruction dropping."""

    def instructions(self, count):
        return [np.array([4, 5, 6, 7, 8, 9]) + i for i in range(count)]

    def test_never_and_always(self, rng):
        original = self.instructions(10)
        assert mask_rate(original, cfg_train_mask(original, 0.0, rng, NULL)) == 0.0
        masked = cfg_train_mask(original, 1.0, rng, NULL)
        assert mask_rate(original, masked) == 1.0
        assert all(m is NULL for m in masked)

    def test_draws_do_not_depend_on_rate(self):
        original = self.instructions(7)
        first = np.random.default_rng(5)
        second = np.random.default_rng(5)
        cfg_train_mask(original, 0.0, first, NULL)
        cfg_train_mask(original, 1.0, second, NULL)
        assert first.random() == second.random()

    def test_rate_is_close_to_probability(self, rng):
        original = self.instructions(4000)
        assert mask_rate(original, cfg_train_mask(original, 0.25, rng, NULL)) == pytest.approx(0.25, abs=0.03)

    def test_probability_range(self, rng):
        with pytest.raises(GuidanceError):
            cfg_train_mask(self.instructions(2), 1.5, rng, NULL)

    def test_empty_rate(self):
        assert mask_rate([], []) == 0.0


class TestAdam:
    """Test update size, skipping and the warm-up schedule."""

    def test_first_step_matches_oracle(self):
        hyper = AdamConfig(lr=0.01, warmup_steps=0)
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        grads = np.array([0.3, -4.0])
        adam_step([p], [grads], AdamState(), hyper)
        expected = [1.0 - adam_first_step(0.3, 0.01), -2.0 - adam_first_step(-4.0, 0.01)]
        np.testing.assert_allclose(p.data, expected, rtol=1e-9)

    def test_frozen_and_gradless_params_skipped(self):
        frozen = Tensor(np.ones(2), requires_grad=False)
        idle = Tensor(np.ones(2), requires_grad=True)
        state = AdamState()
        adam_step([frozen, idle], [np.ones(2), None], state, AdamConfig(lr=0.1, warmup_steps=0))
        np.testing.assert_array_equal(frozen.data, np.ones(2))
        np.testing.assert_array_equal(idle.data, np.ones(2))
        assert state.step == 1 and not state.m

    def test_uses_param_grad_by_default(self):
        p = Tensor(np.zeros(3), requires_grad=True)
        p.grad = np.array([1.0, -1.0, 0.0])
        adam_step([p], None, AdamState(), AdamConfig(lr=0.1, warmup_steps=0))
        assert p.data[0] < 0 < p.data[1]
        assert p.data[2] == 0.0

    def test_gradient_shape_checked(self):
        p = Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(ShapeMismatchError):
            adam_step([p], [np.zeros(2)], AdamState(), AdamConfig())

    def test_warmup_schedule(self):
        hyper = AdamConfig(lr=1e-3, warmup_steps=4)
        assert [learning_rate(hyper, s) for s in (1, 2, 4, 10)] == pytest.approx([2.5e-4, 5e-4, 1e-3, 1e-3])
        assert learning_rate(AdamConfig(lr=1e-3, warmup_steps=0), 1) == 1e-3

    def test_global_grad_norm(self):
        a = Tensor(np.zeros(2), requires_grad=True)
        b = Tensor(np.zeros(1), requires_grad=True)
        a.grad = np.array([3.0, 0.0])
        b.grad = np.array([4.0])
        assert global_grad_norm([a, b, Tensor(np.zeros(1))]) == pytest.approx(5.0)

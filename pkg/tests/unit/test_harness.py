# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Unit tests for the grid environment, the expert and the dataset format.
"""

import math

import numpy as np
import pytest

from gats_engine.core.exceptions import DatasetError
from gats_engine.harness.dataset import (
    MAGIC,
    TRAIN_SEED_LIMIT,
    VIEW2_TOKENS,
    episode_seeds,
    generate_dataset,
    read_dataset,
    replay,
    rollout,
    write_dataset,
)
from gats_engine.harness.env import (
    CELL_VOCAB,
    CURSOR,
    EMPTY,
    MASK,
    NUM_TEMPLATES,
    OBJECT_BASE,
    OUT_OF_BOUNDS,
    TEMPLATES,
    GridEnv,
    GridState,
    Template,
)
from gats_engine.harness.vocab import BOS_ID, EOS_ID, NULL_ID, WORDS, caption_tokens, decode, instruction_tokens

RIGHT, STAY = 3, 4


def one_object_state(cursor=(2, 1), obj=(2, 2)):
    return GridState(size=5, cursor=cursor, objects=((0, *obj),), template=Template(0, 0, 0))


class TestGridEnv:
    """Test layout, pushing and observations."""

    def test_vocabulary_constants(self):
        assert (MASK, OUT_OF_BOUNDS, CELL_VOCAB) == (8, 9, 10)
        assert NUM_TEMPLATES == len(TEMPLATES) == 24

    def test_reset_is_deterministic(self, tiny_env):
        a, b = tiny_env.reset(42), tiny_env.reset(42)
        assert a == b
        np.testing.assert_array_equal(tiny_env.observe(a), tiny_env.observe(b))
        assert len(a.objects) == 3
        a.position_of(a.template.kind)

    def test_push_then_blocked_at_wall(self, tiny_env):
        state = tiny_env.step(one_object_state(), RIGHT)
        assert state.cursor == (2, 2) and state.objects == ((0, 2, 3),)
        state = tiny_env.step(state, RIGHT)
        assert state.cursor == (2, 3) and state.objects == ((0, 2, 4),)
        blocked = tiny_env.step(state, RIGHT)
        assert blocked.cursor == (2, 3) and blocked.objects == state.objects
        assert blocked.t == state.t + 1

    def test_stay_only_advances_time(self, tiny_env):
        state = one_object_state()
        after = tiny_env.step(state, STAY)
        assert (after.cursor, after.objects, after.t) == (state.cursor, state.objects, 1)

    def test_global_observation(self, tiny_env):
        frame = tiny_env.observe(one_object_state()).reshape(5, 5)
        assert frame[2, 1] == CURSOR
        assert frame[2, 2] == OBJECT_BASE
        assert np.count_nonzero(frame == EMPTY) == 23

    def test_egocentric_marks_outside_cells(self, tiny_env):
        view = tiny_env.egocentric(one_object_state(cursor=(0, 0), obj=(1, 1))).reshape(3, 3)
        assert view.size == VIEW2_TOKENS
        assert np.all(view[0] == OUT_OF_BOUNDS) and np.all(view[:, 0] == OUT_OF_BOUNDS)
        assert view[1, 1] == CURSOR and view[2, 2] == OBJECT_BASE

    def test_success_and_horizon(self):
        env = GridEnv(5, 3)
        solved = GridState(size=5, cursor=(1, 1), objects=((0, 0, 0),), template=Template(0, 0, 0))
        assert env.success(solved) and env.done(solved)
        assert env.done(GridState(5, (2, 1), ((0, 2, 2),), Template(0, 0, 0), t=3))

    def test_small_grid_rejected(self):
        with pytest.raises(ValueError):
            GridEnv(3, 10)


class TestVocab:
    """Test instruction and caption encodings."""

    def test_word_ids(self):
        assert len(WORDS) == 17
        assert (NULL_ID, BOS_ID, EOS_ID) == (1, 2, 3)

    def test_instruction_text(self):
        template = Template.from_index(5)
        assert " ".join(decode(instruction_tokens(template))) == template.describe()

    def test_caption_lists_every_object(self, tiny_env):
        tokens = caption_tokens(tiny_env.reset(9))
        assert tokens.size == 14
        assert tokens[0] == BOS_ID and tokens[-1] == EOS_ID


class TestExpertEpisodes:
    """Test rollouts, replay and seed ranges."""

    def test_episodes_succeed_within_horizon(self, tiny_episodes, tiny_env):
        for record in tiny_episodes:
            assert record.success
            assert 1 <= record.steps <= tiny_env.horizon
            assert record.frames.shape == (record.steps, 25)
            assert record.view2.shape == (math.ceil(record.steps / 2), VIEW2_TOKENS)

    def test_replay_reproduces_frames(self, tiny_episodes, tiny_env):
        for record in tiny_episodes:
            np.testing.assert_array_equal(replay(tiny_env, record), record.frames)

    def test_rollout_is_deterministic(self, tiny_env):
        a, b = rollout(tiny_env, 77), rollout(tiny_env, 77)
        np.testing.assert_array_equal(a.actions, b.actions)
        assert a.template == b.template

    def test_held_out_seeds_are_disjoint(self):
        train = episode_seeds(1, 50)
        held_out = episode_seeds(1, 50, held_out=True)
        assert train.max() < TRAIN_SEED_LIMIT <= held_out.min()


@pytest.mark.slow
class TestExpertStatistics:
    """Population checks over ten thousand episodes on the default grid."""

    def test_expert_success_rate(self):
        env = GridEnv()
        seeds = episode_seeds(0, 10_000)
        successes = sum(rollout(env, int(seed)).success for seed in seeds)
        assert successes / len(seeds) >= 0.95

    def test_every_template_is_sampled(self):
        env = GridEnv()
        indices = [env.reset(int(seed)).template.index for seed in episode_seeds(0, 10_000)]
        counts = np.bincount(np.array(indices, dtype=np.int64), minlength=NUM_TEMPLATES)
        assert counts.size == NUM_TEMPLATES
        assert counts.min() >= 200


class TestDatasetFormat:
    """Test writing and parsing dataset files."""

    def test_round_trip(self, tmp_path, tiny_env, tiny_episodes):
        path = write_dataset(tmp_path / "expert.bin", tiny_env, tiny_episodes)
        dataset = read_dataset(path)
        assert len(dataset) == 2
        assert dataset.header.grid_size == 5 and dataset.header.frame_tokens == 25
        assert sum(dataset.header.template_counts) == 2
        for original, parsed in zip(tiny_episodes, dataset.episodes):
            assert parsed.seed == original.seed and parsed.template == original.template
            np.testing.assert_array_equal(parsed.frames, original.frames)
            np.testing.assert_array_equal(parsed.view2, original.view2)
            np.testing.assert_array_equal(parsed.actions, original.actions)
            np.testing.assert_array_equal(parsed.instruction, original.instruction)

    def test_bad_magic(self, tmp_path, tiny_env, tiny_episodes):
        path = write_dataset(tmp_path / "expert.bin", tiny_env, tiny_episodes)
        data = path.read_bytes()
        assert data.startswith(MAGIC)
        path.write_bytes(b"NOTGATS!" + data[len(MAGIC) :])
        with pytest.raises(DatasetError, match="not a GATS dataset"):
            read_dataset(path)

    def test_truncated(self, tmp_path, tiny_env, tiny_episodes):
        path = write_dataset(tmp_path / "expert.bin", tiny_env, tiny_episodes)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(DatasetError, match="truncated"):
            read_dataset(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetError):
            read_dataset(tmp_path / "absent.bin")

    def test_generation_is_byte_identical(self, tmp_path, tiny_env):
        a = generate_dataset(tmp_path / "a.bin", 3, seed=11, env=tiny_env)
        b = generate_dataset(tmp_path / "b.bin", 3, seed=11, env=tiny_env)
        assert a.read_bytes() == b.read_bytes()

    def test_empty_dataset_is_valid(self, tmp_path, tiny_env):
        dataset = read_dataset(generate_dataset(tmp_path / "empty.bin", 0, seed=1, env=tiny_env))
        assert len(dataset) == 0
        assert dataset.header.template_counts == [0] * NUM_TEMPLATES

# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Synthetic corpora drawn from the grid environment.
"""

from typing import List, Tuple

import numpy as np

from gats_engine.harness.env import TEMPLATES, GridEnv, GridState
from gats_engine.harness.expert import scripted_expert
from gats_engine.harness.vocab import caption_tokens, instruction_tokens, null_instruction


def instruction_corpus(count: int, rng: np.random.Generator, null_fraction: float = 0.1) -> List[np.ndarray]:
    """Instructions over all templates plus ``<null>`` sequences so null conditioning is in-distribution."""
    corpus = []
    for _ in range(count):
        if rng.random() < null_fraction:
            corpus.append(null_instruction())
        else:
            corpus.append(instruction_tokens(TEMPLATES[int(rng.integers(len(TEMPLATES)))]))
    return corpus


def _random_state(env: GridEnv, rng: np.random.Generator) -> GridState:
    """A layout a few expert steps into an episode, so objects also appear on edges."""
    state = env.reset(int(rng.integers(2**31)))
    for _ in range(int(rng.integers(0, env.horizon // 2))):
        if env.done(state):
            break
        state = env.step(state, scripted_expert(state))
    return state


def frame_corpus(count: int, rng: np.random.Generator, env: GridEnv) -> List[np.ndarray]:
    """Single global-view frames."""
    return [env.observe(_random_state(env, rng)) for _ in range(count)]


def clip_corpus(count: int, rng: np.random.Generator, env: GridEnv, max_frames: int = 8) -> List[np.ndarray]:
    """``(T, F)`` clips of consecutive expert frames."""
    clips = []
    for _ in range(count):
        state = env.reset(int(rng.integers(2**31)))
        frames = [env.observe(state)]
        length = int(rng.integers(2, max_frames + 1))
        while len(frames) < length and not env.done(state):
            state = env.step(state, scripted_expert(state))
            frames.append(env.observe(state))
        clips.append(np.stack(frames))
    return clips


def caption_corpus(count: int, rng: np.random.Generator, env: GridEnv) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Paired ``(caption tokens, frame tokens)`` examples."""
    pairs = []
    for _ in range(count):
        state = _random_state(env, rng)
        pairs.append((caption_tokens(state), env.observe(state)))
    return pairs


def language_corpus(count: int, rng: np.random.Generator, env: GridEnv) -> List[np.ndarray]:
    """Half instructions (with some ``<null>`` sequences), half captions, shuffled."""
    half = count // 2
    corpus = instruction_corpus(half, rng)
    corpus += [caption for caption, _ in caption_corpus(count - half, rng, env)]
    order = rng.permutation(len(corpus))
    return [corpus[i] for i in order]

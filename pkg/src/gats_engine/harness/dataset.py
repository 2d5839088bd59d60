# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Expert episode generation and the binary dataset format.

Layout (little-endian, see docs/DATASET_FORMAT.md):

    header   magic "GATSDATA", version, grid size, horizon, frame tokens,
             view tokens, instruction length, template count, templates,
             episode count, per-template episode counts
    episode  seed, template, success, step count, view-2 count,
             instruction, frames, view-2 frames, actions
"""

from __future__ import annotations

import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, List, Sequence, Tuple

import numpy as np

from gats_engine.core.exceptions import DatasetError
from gats_engine.harness.env import NUM_TEMPLATES, TEMPLATES, GridEnv
from gats_engine.harness.expert import scripted_expert
from gats_engine.harness.vocab import INSTRUCTION_LENGTH, instruction_tokens

logger = logging.getLogger(__name__)

MAGIC = b"GATSDATA"
VERSION = 1
VIEW2_TOKENS = 9
VIEW2_EVERY = 2
TRAIN_SEED_LIMIT = 2**31

_HEADER = struct.Struct("<8sHHHHHHH")
_EPISODE = struct.Struct("<QHBxHH")


@dataclass
class EpisodeRecord:
    """One expert episode; frames are observed before each action."""

    seed: int
    template: int
    instruction: np.ndarray
    frames: np.ndarray
    view2: np.ndarray
    actions: np.ndarray
    success: bool

    @property
    def steps(self) -> int:
        return int(self.actions.size)


@dataclass
class DatasetHeader:
    grid_size: int
    horizon: int
    frame_tokens: int
    view_tokens: int
    instruction_length: int
    templates: List[Tuple[int, int, int]]
    episode_count: int
    template_counts: List[int] = field(default_factory=list)


@dataclass
class Dataset:
    header: DatasetHeader
    episodes: List[EpisodeRecord]

    def __len__(self) -> int:
        return len(self.episodes)


def rollout(env: GridEnv, seed: int) -> EpisodeRecord:
    """Run the scripted expert from ``seed`` until success or the horizon."""
    state = env.reset(seed)
    frames, view2, actions = [], [], []
    while not env.done(state):
        frames.append(env.observe(state))
        if state.t % VIEW2_EVERY == 0:
            view2.append(env.egocentric(state))
        action = scripted_expert(state)
        actions.append(action)
        state = env.step(state, action)
    return EpisodeRecord(
        seed=seed,
        template=state.template.index,
        instruction=instruction_tokens(state.template),
        frames=np.array(frames, dtype=np.int64).reshape(len(frames), env.frame_tokens),
        view2=np.array(view2, dtype=np.int64).reshape(len(view2), VIEW2_TOKENS),
        actions=np.array(actions, dtype=np.int64),
        success=env.success(state),
    )


def replay(env: GridEnv, record: EpisodeRecord) -> np.ndarray:
    """Observations produced by replaying ``record.actions`` from its seed."""
    state = env.reset(record.seed)
    frames = []
    for action in record.actions:
        frames.append(env.observe(state))
        state = env.step(state, int(action))
    return np.array(frames, dtype=np.int64).reshape(len(frames), env.frame_tokens)


def episode_seeds(seed: int, count: int, held_out: bool = False) -> np.ndarray:
    """Episode seeds; held-out seeds live in a range disjoint from training seeds."""
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, TRAIN_SEED_LIMIT, size=count, dtype=np.int64)
    return seeds + TRAIN_SEED_LIMIT if held_out else seeds


def collect_episodes(env: GridEnv, n_episodes: int, seed: int) -> List[EpisodeRecord]:
    """
    ``n_episodes`` successful expert episodes, deterministic under ``seed``.

    Raises
    ------
    DatasetError
        If the expert keeps failing
    """
    episodes: List[EpisodeRecord] = []
    attempts = 0
    budget = 2 * n_episodes + 100
    candidates = episode_seeds(seed, budget)
    while len(episodes) < n_episodes:
        if attempts >= budget:
            raise DatasetError(f"only {len(episodes)} successful episodes after {attempts} attempts")
        record = rollout(env, int(candidates[attempts]))
        attempts += 1
        if record.success:
            episodes.append(record)
    if attempts > n_episodes:
        logger.info(f"Expert failed {attempts - n_episodes} of {attempts} episodes; failures skipped")
    return episodes


def _write_dataset(stream: BinaryIO, env: GridEnv, episodes: Sequence[EpisodeRecord]) -> None:
    counts = np.bincount(np.array([e.template for e in episodes], dtype=np.int64), minlength=NUM_TEMPLATES)
    stream.write(
        _HEADER.pack(
            MAGIC, VERSION, env.size, env.horizon, env.frame_tokens, VIEW2_TOKENS, INSTRUCTION_LENGTH, NUM_TEMPLATES
        )
    )
    for template in TEMPLATES:
        stream.write(struct.pack("<BBB", template.color, template.shape, template.corner))
    stream.write(struct.pack("<I", len(episodes)))
    stream.write(np.asarray(counts, dtype="<u4").tobytes())
    for e in episodes:
        stream.write(_EPISODE.pack(e.seed, e.template, int(e.success), e.steps, e.view2.shape[0]))
        for block in (e.instruction, e.frames, e.view2, e.actions):
            stream.write(np.asarray(block, dtype="<u1").tobytes())


def write_dataset(path: Path, env: GridEnv, episodes: Sequence[EpisodeRecord]) -> Path:
    """Write ``episodes`` atomically (temporary file, then rename)."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        with os.fdopen(fd, "wb") as stream:
            _write_dataset(stream, env, episodes)
        os.replace(tmp, path)
    except OSError as e:
        logger.error(f"Failed to write dataset {path}: {e}")
        raise DatasetError(f"cannot write {path}: {e}") from e
    logger.info(f"Wrote {len(episodes)} episodes to {path}")
    return path


def generate_dataset(path: Path, n_episodes: int, seed: int, env: GridEnv | None = None) -> Path:
    """Generate and write ``n_episodes`` successful expert episodes."""
    env = env or GridEnv()
    return write_dataset(path, env, collect_episodes(env, n_episodes, seed))


def _read_exact(stream: BinaryIO, size: int, what: str) -> bytes:
    data = stream.read(size)
    if len(data) != size:
        raise DatasetError(f"truncated file while reading {what}")
    return data


def _read_tokens(stream: BinaryIO, shape: Tuple[int, ...], what: str) -> np.ndarray:
    count = int(np.prod(shape, dtype=np.int64))
    raw = _read_exact(stream, count, what)
    return np.frombuffer(raw, dtype="<u1").astype(np.int64).reshape(shape)


def read_dataset(path: Path) -> Dataset:
    """
    Parse a dataset file.

    Raises
    ------
    DatasetError
        On a wrong magic, an unsupported version or a truncated file
    """
    path = Path(path)
    try:
        stream = path.open("rb")
    except OSError as e:
        raise DatasetError(f"cannot open {path}: {e}") from e
    with stream:
        magic, version, size, horizon, frame_tokens, view_tokens, instr_len, n_templates = _HEADER.unpack(
            _read_exact(stream, _HEADER.size, "header")
        )
        if magic != MAGIC:
            raise DatasetError(f"{path} is not a GATS dataset")
        if version != VERSION:
            raise DatasetError(f"{path} has format version {version}; this reader supports version {VERSION}")
        templates = [struct.unpack("<BBB", _read_exact(stream, 3, "templates")) for _ in range(n_templates)]
        (count,) = struct.unpack("<I", _read_exact(stream, 4, "episode count"))
        template_counts = np.frombuffer(_read_exact(stream, 4 * n_templates, "template counts"), dtype="<u4")
        header = DatasetHeader(
            size, horizon, frame_tokens, view_tokens, instr_len, templates, count, [int(c) for c in template_counts]
        )
        episodes = []
        for i in range(count):
            seed, template, success, steps, views = _EPISODE.unpack(_read_exact(stream, _EPISODE.size, f"episode {i}"))
            episodes.append(
                EpisodeRecord(
                    seed=int(seed),
                    template=int(template),
                    instruction=_read_tokens(stream, (instr_len,), "instruction"),
                    frames=_read_tokens(stream, (steps, frame_tokens), "frames"),
                    view2=_read_tokens(stream, (views, view_tokens), "view-2 frames"),
                    actions=_read_tokens(stream, (steps,), "actions"),
                    success=bool(success),
                )
            )
    return Dataset(header, episodes)

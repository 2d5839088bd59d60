# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Grid pushing environment.

A cursor moves on a square grid holding three objects, each a (color, shape)
pair. Moving into an object pushes it one cell if the cell behind it is free
and inside the grid; otherwise the move is blocked. The instruction names one
of the objects and a corner; the episode succeeds once that object sits in the
corner cell.

Observations are cell tokens: the full grid row-major (global view) and the
3x3 neighbourhood of the cursor (egocentric view).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

COLORS = ("red", "green", "blue")
SHAPES = ("circle", "square")
CORNERS = ("top_left", "top_right", "bottom_left", "bottom_right")
ACTIONS = ("up", "down", "left", "right", "stay")
ACTION_DELTAS = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))

# Cell tokens
EMPTY = 0
CURSOR = 1
OBJECT_BASE = 2
MASK = OBJECT_BASE + len(COLORS) * len(SHAPES)
OUT_OF_BOUNDS = MASK + 1
CELL_VOCAB = OUT_OF_BOUNDS + 1

NUM_KINDS = len(COLORS) * len(SHAPES)
NUM_TEMPLATES = NUM_KINDS * len(CORNERS)
DEFAULT_GRID = 7
DEFAULT_HORIZON = 40


def kind_of(color: int, shape: int) -> int:
    return color * len(SHAPES) + shape


@dataclass(frozen=True)
class Template:
    """``push <color> <shape> to <corner>``."""

    color: int
    shape: int
    corner: int

    @property
    def kind(self) -> int:
        return kind_of(self.color, self.shape)

    @property
    def index(self) -> int:
        return self.kind * len(CORNERS) + self.corner

    @classmethod
    def from_index(cls, index: int) -> "Template":
        kind, corner = divmod(int(index), len(CORNERS))
        color, shape = divmod(kind, len(SHAPES))
        return cls(color, shape, corner)

    def describe(self) -> str:
        return f"push {COLORS[self.color]} {SHAPES[self.shape]} to {CORNERS[self.corner].replace('_', ' ')}"


TEMPLATES = tuple(Template.from_index(i) for i in range(NUM_TEMPLATES))


@dataclass(frozen=True)
class GridState:
    """Immutable environment state; ``objects`` holds ``(kind, row, col)`` triples."""

    size: int
    cursor: Tuple[int, int]
    objects: Tuple[Tuple[int, int, int], ...]
    template: Template
    t: int = 0

    def object_at(self, row: int, col: int) -> Optional[int]:
        for i, (_, r, c) in enumerate(self.objects):
            if (r, c) == (row, col):
                return i
        return None

    def position_of(self, kind: int) -> Tuple[int, int]:
        for k, r, c in self.objects:
            if k == kind:
                return r, c
        raise KeyError(kind)

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.size and 0 <= col < self.size

    def corner_cell(self, corner: Optional[int] = None) -> Tuple[int, int]:
        corner = self.template.corner if corner is None else corner
        last = self.size - 1
        return (0 if corner in (0, 1) else last, 0 if corner in (0, 2) else last)


class GridEnv:
    """
    Deterministic grid pushing task.

    Parameters
    ----------
    size : int, default=7
        Grid side length
    horizon : int, default=40
        Maximum number of actions per episode
    """

    def __init__(self, size: int = DEFAULT_GRID, horizon: int = DEFAULT_HORIZON):
        if size < 4:
            raise ValueError(f"grid size must be at least 4, got {size}")
        self.size = size
        self.horizon = horizon

    @property
    def frame_tokens(self) -> int:
        return self.size * self.size

    def reset(self, seed: int, template: Optional[Template] = None) -> GridState:
        """
        Layout fully determined by ``seed``.

        Objects start in interior cells so every push direction is available;
        the target object is always present.
        """
        rng = np.random.default_rng(seed)
        if template is None:
            template = TEMPLATES[int(rng.integers(NUM_TEMPLATES))]
        others = [k for k in range(NUM_KINDS) if k != template.kind]
        kinds = [template.kind] + [others[i] for i in rng.choice(len(others), size=2, replace=False)]

        interior = [(r, c) for r in range(1, self.size - 1) for c in range(1, self.size - 1)]
        picks = rng.choice(len(interior), size=len(kinds), replace=False)
        objects = tuple(sorted((k, *interior[i]) for k, i in zip(kinds, picks)))

        occupied = {(r, c) for _, r, c in objects}
        free = [(r, c) for r in range(self.size) for c in range(self.size) if (r, c) not in occupied]
        cursor = free[int(rng.integers(len(free)))]
        return GridState(self.size, cursor, objects, template, 0)

    def step(self, state: GridState, action: int) -> GridState:
        """Apply ``action``; blocked moves leave the cursor in place."""
        dr, dc = ACTION_DELTAS[int(action)]
        r, c = state.cursor
        nr, nc = r + dr, c + dc
        if (dr, dc) == (0, 0) or not state.in_bounds(nr, nc):
            return replace(state, t=state.t + 1)
        hit = state.object_at(nr, nc)
        if hit is None:
            return replace(state, cursor=(nr, nc), t=state.t + 1)
        br, bc = nr + dr, nc + dc
        if not state.in_bounds(br, bc) or state.object_at(br, bc) is not None:
            return replace(state, t=state.t + 1)
        kind = state.objects[hit][0]
        objects = tuple(sorted(o if i != hit else (kind, br, bc) for i, o in enumerate(state.objects)))
        return replace(state, cursor=(nr, nc), objects=objects, t=state.t + 1)

    def success(self, state: GridState) -> bool:
        return state.position_of(state.template.kind) == state.corner_cell()

    def done(self, state: GridState) -> bool:
        return self.success(state) or state.t >= self.horizon

    def observe(self, state: GridState) -> np.ndarray:
        """Global view: ``size * size`` cell tokens, row-major."""
        grid = np.full((self.size, self.size), EMPTY, dtype=np.int64)
        for kind, r, c in state.objects:
            grid[r, c] = OBJECT_BASE + kind
        grid[state.cursor] = CURSOR
        return grid.reshape(-1)

    def egocentric(self, state: GridState) -> np.ndarray:
        """Second view: the 3x3 cells around the cursor, out-of-grid cells marked."""
        grid = self.observe(state).reshape(self.size, self.size)
        r, c = state.cursor
        view = np.full((3, 3), OUT_OF_BOUNDS, dtype=np.int64)
        for i, dr in enumerate((-1, 0, 1)):
            for j, dc in enumerate((-1, 0, 1)):
                if state.in_bounds(r + dr, c + dc):
                    view[i, j] = grid[r + dr, c + dc]
        return view.reshape(-1)

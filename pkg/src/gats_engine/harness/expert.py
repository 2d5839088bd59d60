# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Scripted pushing expert.

The target object travels an L-shaped route to its corner, vertical leg first
unless that route is blocked. The cursor walks (breadth-first, never through
objects) to the cell behind the object and pushes.
"""

from collections import deque
from typing import Optional, Tuple

from gats_engine.harness.env import ACTION_DELTAS, GridState

STAY = 4
Cell = Tuple[int, int]


def _sign(x: int) -> int:
    return (x > 0) - (x < 0)


def _legs(obj: Cell, goal: Cell, vertical_first: bool):
    vertical = ((_sign(goal[0] - obj[0]), 0), abs(goal[0] - obj[0]))
    horizontal = ((0, _sign(goal[1] - obj[1])), abs(goal[1] - obj[1]))
    legs = [vertical, horizontal] if vertical_first else [horizontal, vertical]
    return [(d, n) for d, n in legs if n > 0]


def _route_clear(state: GridState, obj: Cell, goal: Cell, vertical_first: bool) -> bool:
    """Every cell the object enters, and the cell behind it at the start of each leg, is free."""
    pos = obj
    for (dr, dc), length in _legs(obj, goal, vertical_first):
        behind = (pos[0] - dr, pos[1] - dc)
        if not state.in_bounds(*behind):
            return False
        if behind != obj and state.object_at(*behind) is not None:
            return False
        for _ in range(length):
            pos = (pos[0] + dr, pos[1] + dc)
            if state.object_at(*pos) is not None:
                return False
    return True


def _first_step(state: GridState, start: Cell, target: Cell) -> Optional[int]:
    """First action of a shortest object-free path; ties go to vertical moves."""
    if start == target:
        return None
    parents = {start: None}
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        if cell == target:
            break
        for action in range(4):
            dr, dc = ACTION_DELTAS[action]
            nxt = (cell[0] + dr, cell[1] + dc)
            if nxt in parents or not state.in_bounds(*nxt) or state.object_at(*nxt) is not None:
                continue
            parents[nxt] = (cell, action)
            queue.append(nxt)
    if target not in parents:
        return None
    cell, action = target, None
    while parents[cell] is not None:
        cell, action = parents[cell]
    return action


def scripted_expert(state: GridState) -> int:
    """Greedy push policy; ``stay`` when the object is home or no route exists."""
    obj = state.position_of(state.template.kind)
    goal = state.corner_cell()
    if obj == goal:
        return STAY

    vertical_first = True
    if not _route_clear(state, obj, goal, True) and _route_clear(state, obj, goal, False):
        vertical_first = False
    (dr, dc), _ = _legs(obj, goal, vertical_first)[0]
    behind = (obj[0] - dr, obj[1] - dc)
    if state.cursor == behind:
        return ACTION_DELTAS.index((dr, dc))
    if not state.in_bounds(*behind):
        return STAY
    step = _first_step(state, state.cursor, behind)
    return STAY if step is None else step

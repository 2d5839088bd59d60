# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Success-rate evaluation on held-out episode seeds.

Every evaluation reports the unguided policy (lambda = 0) next to the guided
one, over the same seeds.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from gats_engine.gats.composer import ActivationCache
from gats_engine.harness.dataset import VIEW2_EVERY, episode_seeds
from gats_engine.harness.env import NUM_TEMPLATES, GridEnv
from gats_engine.harness.vocab import instruction_tokens
from gats_engine.presets.agent import AgentPreset, AgentSession

logger = logging.getLogger(__name__)


@dataclass
class EvaluationRow:
    lam: float
    successes: int = 0
    episodes: int = 0
    per_template: Dict[int, Tuple[int, int]] = field(default_factory=dict)

    @property
    def success_rate(self) -> float:
        return self.successes / self.episodes if self.episodes else 0.0

    def record(self, template: int, success: bool) -> None:
        won, total = self.per_template.get(template, (0, 0))
        self.per_template[template] = (won + int(success), total + 1)
        self.successes += int(success)
        self.episodes += 1


@dataclass
class EvaluationReport:
    rows: List[EvaluationRow]
    seed: int

    def row(self, lam: float) -> Optional[EvaluationRow]:
        for row in self.rows:
            if row.lam == lam:
                return row
        return None


def run_episode(session: AgentSession, env: GridEnv, seed: int) -> Tuple[int, bool]:
    """Play one episode greedily; returns ``(template index, success)``."""
    session.reset()
    state = env.reset(seed)
    session.issue(instruction_tokens(state.template))
    second_view = session.preset.second_view
    while not env.done(state):
        view2 = env.egocentric(state) if second_view and state.t % VIEW2_EVERY == 0 else None
        session.observe(env.observe(state), view2)
        state = env.step(state, session.act())
    return state.template.index, env.success(state)


def evaluate(
    preset: AgentPreset,
    env: GridEnv,
    n_episodes: int,
    lam: float,
    seed: int = 0,
) -> EvaluationReport:
    """
    Success rate of the greedy guided policy on ``n_episodes`` held-out seeds.

    The report holds a ``lambda = 0`` row and, when ``lam`` differs, a row for
    ``lam``; both play the same seeds.
    """
    seeds = episode_seeds(seed, n_episodes, held_out=True)
    cache = ActivationCache()
    lams = [0.0] if lam == 0 else [0.0, float(lam)]
    rows = []
    for value in lams:
        session = preset.session(value, cache)
        row = EvaluationRow(lam=value)
        for episode_seed in seeds:
            template, success = run_episode(session, env, int(episode_seed))
            row.record(template, success)
        logger.info(f"lambda={value}: success {row.successes}/{row.episodes} ({row.success_rate:.3f})")
        rows.append(row)
    return EvaluationReport(rows=rows, seed=seed)


def template_table(row: EvaluationRow) -> List[Tuple[int, int, int]]:
    """``(template, successes, episodes)`` for every template, unseen ones included."""
    return [(t, *row.per_template.get(t, (0, 0))) for t in range(NUM_TEMPLATES)]

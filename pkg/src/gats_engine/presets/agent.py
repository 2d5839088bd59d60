# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Instruction-following agent: language, vision and action models joined by GATS.

Arrival order inside an episode of T steps::

    [instruction tokens]            before step 0, and again at any step where
                                    a new instruction is issued
    frame t   (grid cells)          every step
    view2 t   (3x3 egocentric)      every second step, when enabled
    action slots t (4 per step)     every step; the last slot reads out a_t

The language model is frozen and never steered, so its activations for one
instruction are computed once and reused at every step. Vision, the optional
second view and the action model are steered.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from gats_engine.components.transformer import ComponentModel
from gats_engine.config.settings import RunConfig
from gats_engine.core import ops
from gats_engine.core.exceptions import ConfigurationError, GatherError, ShapeMismatchError
from gats_engine.core.tensor import Tensor
from gats_engine.gats.composer import (
    ActivationCache,
    CachedRun,
    GatsBundle,
    ModalityInput,
    Segment,
    joint_forward,
)
from gats_engine.gats.layer import GatsModule
from gats_engine.harness.dataset import VIEW2_EVERY, VIEW2_TOKENS, EpisodeRecord
from gats_engine.harness.vocab import null_instruction
from gats_engine.models.gats_models import ModalitySpec
from gats_engine.presets.components import (
    action_spec,
    build_components,
    gats_config_from_run,
    language_spec,
    vision_spec,
)
from gats_engine.training.guidance import guided_policy

logger = logging.getLogger(__name__)

LANGUAGE_ID = 1
VISION_ID = 2
ACTION_ID = 3
VIEW2_ID = 4

# (step, instruction tokens); the first entry must be at step 0
InstructionSchedule = Sequence[Tuple[int, np.ndarray]]


@dataclass
class EpisodeLayout:
    """Global arrival indices of every row of an episode, per modality."""

    language: np.ndarray
    vision: np.ndarray
    view2: np.ndarray
    action: np.ndarray
    language_lengths: List[int] = field(default_factory=list)

    @property
    def total(self) -> int:
        return int(self.language.size + self.vision.size + self.view2.size + self.action.size)


def view2_steps(num_steps: int) -> int:
    return (num_steps + VIEW2_EVERY - 1) // VIEW2_EVERY


def episode_layout(
    num_steps: int,
    frame_tokens: int,
    instructions: InstructionSchedule,
    second_view: bool = False,
    include_language: bool = True,
    slots_per_step: int = 4,
) -> EpisodeLayout:
    """
    Interleave the modalities of ``num_steps`` environment steps.

    Raises
    ------
    GatherError
        If the instruction schedule does not start at step 0 or lists a step twice
    """
    changes = {}
    for step, tokens in instructions:
        if step in changes or not 0 <= step < max(num_steps, 1):
            raise GatherError(f"instruction schedule has a duplicate or out-of-range step {step}")
        changes[int(step)] = len(tokens)
    if include_language and 0 not in changes:
        raise GatherError("the first instruction must be issued at step 0")

    counter = 0
    rows: Dict[str, List[int]] = {"language": [], "vision": [], "view2": [], "action": []}
    lengths = []

    def take(kind: str, count: int) -> None:
        nonlocal counter
        rows[kind].extend(range(counter, counter + count))
        counter += count

    for t in range(num_steps):
        if include_language and t in changes:
            take("language", changes[t])
            lengths.append(changes[t])
        take("vision", frame_tokens)
        if second_view and t % VIEW2_EVERY == 0:
            take("view2", VIEW2_TOKENS)
        take("action", slots_per_step)
    return EpisodeLayout(
        language=np.array(rows["language"], dtype=np.int64),
        vision=np.array(rows["vision"], dtype=np.int64),
        view2=np.array(rows["view2"], dtype=np.int64),
        action=np.array(rows["action"], dtype=np.int64),
        language_lengths=lengths,
    )


class AgentPreset:
    """
    A composed agent.

    Parameters
    ----------
    bundle : GatsBundle
        Language, vision and action models plus the GATS module
    frame_tokens : int
        Cells per global frame
    second_view : bool
        Whether the egocentric view modality is present
    mask_language : bool
        Drop the instruction stream entirely (instruction-free tasks)
    """

    def __init__(self, bundle: GatsBundle, frame_tokens: int, second_view: bool = False, mask_language: bool = False):
        self.bundle = bundle
        self.frame_tokens = frame_tokens
        self.second_view = second_view
        self.mask_language = mask_language
        self.null_tokens = null_instruction()

    @property
    def language(self) -> ComponentModel:
        return self.bundle.model_for(LANGUAGE_ID)

    @property
    def vision(self) -> ComponentModel:
        return self.bundle.model_for(VISION_ID)

    @property
    def action(self) -> ComponentModel:
        return self.bundle.model_for(ACTION_ID)

    @property
    def slots_per_step(self) -> int:
        return self.action.spec.slots_per_step

    def inputs(
        self,
        frames: np.ndarray,
        instructions: InstructionSchedule,
        view2: Optional[np.ndarray] = None,
        language_runs: Optional[Sequence[CachedRun]] = None,
    ) -> Dict[int, ModalityInput]:
        """
        Joint-forward inputs for an episode prefix.

        ``frames`` is ``(T, F)``; ``view2`` is ``(ceil(T / 2), 9)`` when the second
        view is enabled. ``language_runs`` optionally supplies one already
        resolved language forward per instruction.

        Raises
        ------
        ShapeMismatchError
            If frames or second-view tokens do not fit the episode
        """
        frames = np.asarray(frames, dtype=np.int64)
        if frames.ndim != 2 or frames.shape[1] != self.frame_tokens or frames.shape[0] < 1:
            raise ShapeMismatchError("agent inputs", frames.shape, (self.frame_tokens,), detail="frames")
        steps = frames.shape[0]
        layout = episode_layout(
            steps,
            self.frame_tokens,
            instructions,
            second_view=self.second_view,
            include_language=not self.mask_language,
            slots_per_step=self.slots_per_step,
        )
        inputs = {
            VISION_ID: ModalityInput.of_tokens(VISION_ID, frames, layout.vision),
            ACTION_ID: ModalityInput.of_slots(ACTION_ID, steps, layout.action),
        }
        if self.second_view:
            view2 = np.asarray(view2 if view2 is not None else np.zeros((0, VIEW2_TOKENS)), dtype=np.int64)
            expected = (view2_steps(steps), VIEW2_TOKENS)
            if view2.shape != expected:
                raise ShapeMismatchError("agent inputs", view2.shape, expected, detail="second view")
            inputs[VIEW2_ID] = ModalityInput.of_tokens(VIEW2_ID, view2, layout.view2)
        if not self.mask_language:
            if language_runs is not None:
                segments = tuple(Segment(cached=run) for run in language_runs)
            else:
                segments = tuple(Segment(tokens=np.asarray(tokens, dtype=np.int64)) for _, tokens in instructions)
            inputs[LANGUAGE_ID] = ModalityInput(LANGUAGE_ID, layout.language, segments)
        return inputs

    def action_logits(
        self,
        frames: np.ndarray,
        instructions: InstructionSchedule,
        view2: Optional[np.ndarray] = None,
        cache: Optional[ActivationCache] = None,
        language_runs: Optional[Sequence[CachedRun]] = None,
    ) -> Tensor:
        """``(T, num_actions)`` logits, one row per step."""
        inputs = self.inputs(frames, instructions, view2, language_runs)
        return joint_forward(self.bundle, inputs, cache=cache, outputs=[ACTION_ID]).logits[ACTION_ID]

    def episode_loss(
        self,
        record: EpisodeRecord,
        instruction: Optional[np.ndarray] = None,
        cache: Optional[ActivationCache] = None,
    ) -> Tensor:
        """Behaviour-cloning cross-entropy of one expert episode."""
        instruction = record.instruction if instruction is None else instruction
        view2 = record.view2 if self.second_view else None
        logits = self.action_logits(record.frames, [(0, instruction)], view2, cache=cache)
        return ops.cross_entropy(logits, record.actions)

    def session(self, lam: float = 0.0, cache: Optional[ActivationCache] = None) -> "AgentSession":
        return AgentSession(self, lam, cache)


class AgentSession:
    """
    Step-by-step control of one episode at a time.

    ``issue`` runs the language model once per new instruction of the episode;
    ``observe`` appends the step's observations and ``act`` returns the greedy
    guided action. The unconditional branch swaps every instruction for the
    null sequence and keeps vision intact.
    """

    def __init__(self, preset: AgentPreset, lam: float = 0.0, cache: Optional[ActivationCache] = None):
        self.preset = preset
        self.lam = lam
        self._shared = cache if cache is not None else ActivationCache()
        self._cacheable = preset.language.parameter_count(trainable_only=True) == 0
        self._null_run = self._shared.lookup(preset.language, preset.null_tokens) if self._cacheable else None
        self.reset()

    def reset(self) -> None:
        """Start a new episode."""
        self._episode_cache = ActivationCache()
        self._instructions: List[Tuple[int, np.ndarray]] = []
        self._runs: List[CachedRun] = []
        self._frames: List[np.ndarray] = []
        self._view2: List[np.ndarray] = []

    @property
    def language_forwards(self) -> int:
        """Language model forwards run for instructions issued this episode."""
        return self._episode_cache.forward_count

    @property
    def steps(self) -> int:
        return len(self._frames)

    def issue(self, instruction: np.ndarray) -> None:
        """Set the instruction for the upcoming step."""
        tokens = np.asarray(instruction, dtype=np.int64)
        step = self.steps
        if self._instructions and self._instructions[-1][0] == step:
            self._instructions.pop()
            if len(self._runs) > len(self._instructions):
                self._runs.pop()
        self._instructions.append((step, tokens))
        if self._cacheable and not self.preset.mask_language:
            self._runs.append(self._episode_cache.lookup(self.preset.language, tokens))
        logger.debug(f"Instruction issued at step {step}; {self.language_forwards} language forwards this episode")

    def observe(self, frame: np.ndarray, view2: Optional[np.ndarray] = None) -> None:
        if not self.preset.mask_language and not self._instructions:
            raise GatherError("issue an instruction before the first observation")
        if self.preset.second_view and self.steps % VIEW2_EVERY == 0:
            if view2 is None:
                raise ShapeMismatchError("observe", (0,), (VIEW2_TOKENS,), detail="second view due this step")
            self._view2.append(np.asarray(view2, dtype=np.int64).reshape(VIEW2_TOKENS))
        self._frames.append(np.asarray(frame, dtype=np.int64).reshape(self.preset.frame_tokens))

    def _logits(self, instructions: InstructionSchedule, runs: Optional[Sequence[CachedRun]]) -> np.ndarray:
        frames = np.stack(self._frames)
        view2 = np.stack(self._view2) if self._view2 else np.zeros((0, VIEW2_TOKENS), dtype=np.int64)
        logits = self.preset.action_logits(
            frames, instructions, view2 if self.preset.second_view else None, language_runs=runs
        )
        return logits.data[-1]

    def policy(self) -> np.ndarray:
        """Guided action distribution for the latest observed step."""
        if not self._frames:
            raise GatherError("no observation yet")
        runs = self._runs if self._runs else None
        l_cond = self._logits(self._instructions, runs)
        if self.lam == 0 or self.preset.mask_language:
            return guided_policy(l_cond, l_cond, 0.0)
        null_schedule = [(step, self.preset.null_tokens) for step, _ in self._instructions]
        null_runs = [self._null_run] * len(null_schedule) if self._null_run is not None else None
        l_uncond = self._logits(null_schedule, null_runs)
        return guided_policy(l_cond, l_uncond, self.lam)

    def act(self) -> int:
        return int(np.argmax(self.policy()))


# --------------------------------------------------------------------------- #
# Construction
# --------------------------------------------------------------------------- #
def _uses_second_view(config: RunConfig) -> bool:
    return config.preset == "agent3_twoview" or config.harness.second_view


def build_agent_preset(
    config: RunConfig,
    rng: np.random.Generator,
    components: Optional[Mapping[str, ComponentModel]] = None,
) -> AgentPreset:
    """
    Compose the agent described by ``config``.

    ``components`` supplies pretrained models; otherwise fresh ones are built.

    Raises
    ------
    GatherError
        If the configuration names a modality the agent does not have
    ConfigurationError
        If the action modality is not steered or its model is frozen
    """
    second_view = _uses_second_view(config)
    if components is None:
        components = build_components(
            config, [language_spec(config), vision_spec(config, "time_space"), action_spec(config)], rng
        )
    models = dict(components)
    if models["action"].frozen:
        raise ConfigurationError("the action model is trained from scratch and cannot be frozen")

    modalities = [
        (LANGUAGE_ID, "language", models["language"].width),
        (VISION_ID, "vision", models["vision"].width),
        (ACTION_ID, "action", models["action"].width),
    ]
    bindings = {LANGUAGE_ID: "language", VISION_ID: "vision", ACTION_ID: "action"}
    if second_view:
        modalities.append((VIEW2_ID, "view2", models["vision"].width))
        bindings[VIEW2_ID] = "vision"
    gats_config = gats_config_from_run(
        config, modalities, default_layers=2, default_steered=[name for _, name, _ in modalities[1:]]
    )
    if not gats_config.spec(ACTION_ID).steered:
        raise ConfigurationError("the action modality must be steered")

    bundle = GatsBundle(GatsModule(gats_config, rng), models, bindings)
    logger.info(
        f"Agent preset '{config.preset}': {bundle.parameter_count(trainable_only=True)} trainable, "
        f"{bundle.parameter_count()} total parameters"
    )
    return AgentPreset(
        bundle,
        frame_tokens=config.harness.grid_size**2,
        second_view=second_view,
        mask_language=config.harness.mask_language,
    )


def add_second_view(
    preset: AgentPreset, rng: np.random.Generator, context_len: int = VIEW2_TOKENS, steered: bool = True
) -> AgentPreset:
    """
    Extend a trained agent with the egocentric view.

    Existing GATS parameters carry over; only the new modality's tables are fresh.
    """
    if preset.second_view:
        raise GatherError("the agent already has a second view")
    spec = ModalitySpec(
        modality_id=VIEW2_ID,
        name="view2",
        embed_dim=preset.vision.width,
        context_len=context_len,
        steered=steered,
    )
    gats = preset.bundle.gats.with_modality(spec, rng)
    bindings = dict(preset.bundle.bindings)
    bindings[VIEW2_ID] = "vision"
    bundle = GatsBundle(gats, {name: model for name, model in preset.bundle.components}, bindings)
    return AgentPreset(bundle, preset.frame_tokens, second_view=True, mask_language=preset.mask_language)

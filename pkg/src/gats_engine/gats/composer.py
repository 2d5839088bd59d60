# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Interleaving GATS layers with component models.

The composer computes where each GATS layer sits inside every component model
(:func:`build_plan`), runs all models side by side while handing their
intermediate activations to the GATS layers (:func:`joint_forward`), and serves
activations of frozen, non-steered inputs from an :class:`ActivationCache`.
"""

from __future__ import annotations

import logging
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from gats_engine.components.transformer import ComponentModel, StreamLayout
from gats_engine.core import ops
from gats_engine.core.exceptions import GatherError, PlanError, ShapeMismatchError
from gats_engine.core.module import Module
from gats_engine.core.tensor import Tensor
from gats_engine.gats.layer import GatsModule, ModalityStream
from gats_engine.models.gats_models import GatsConfig, InterleavePlan

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------- #
# Plan
# --------------------------------------------------------------------------- #
def build_plan(K: int, layer_counts: Sequence[int]) -> InterleavePlan:
    """
    Proportional interleaving.

    GATS layer ``k`` (1-based) reads model ``i`` after layer
    ``min(max(1, floor(k * L_i / K)), L_i - 1)``.

    Raises
    ------
    PlanError
        If ``K < 1`` or any model has fewer than two layers
    """
    counts = tuple(int(n) for n in layer_counts)
    if K < 1:
        raise PlanError(f"K must be at least 1, got {K}")
    if not counts:
        raise PlanError("at least one component model is required")
    short = [i + 1 for i, n in enumerate(counts) if n < 2]
    if short:
        raise PlanError(f"models {short} have fewer than 2 layers; no interior insertion point exists")
    rows = tuple(
        tuple(min(max(1, (k * n) // K), n - 1) for n in counts) for k in range(1, K + 1)
    )
    return InterleavePlan(K=K, layer_counts=counts, rows=rows)


# --------------------------------------------------------------------------- #
# Activation cache
# --------------------------------------------------------------------------- #
@dataclass
class CachedRun:
    """Every tap of one frozen forward, plus its logits and layout."""

    taps: Dict[int, Tensor]
    logits: Tensor
    layout: StreamLayout


class ActivationCache:
    """
    LRU store of frozen-model forwards keyed by (model fingerprint, token ids).

    Any parameter change alters the fingerprint, so stale entries are never
    returned. ``forward_count`` counts the forwards actually executed.
    """

    def __init__(self, max_entries: int = 128):
        self.max_entries = max_entries
        self._entries: "OrderedDict[Tuple[str, Tuple[int, ...]], CachedRun]" = OrderedDict()
        self.forward_count = 0
        self.hits = 0

    def __len__(self) -> int:
        return len(self._entries)

    def clear(self) -> None:
        self._entries.clear()

    def lookup(self, model: ComponentModel, tokens: np.ndarray) -> CachedRun:
        tokens = np.asarray(tokens, dtype=np.int64)
        key = (model.fingerprint(), tuple(int(t) for t in tokens.reshape(-1)) + tokens.shape)
        entry = self._entries.get(key)
        if entry is not None:
            self._entries.move_to_end(key)
            self.hits += 1
            return entry

        logits, taps = model.forward_with_taps(tokens=tokens)
        _, layout = model.embed(tokens=tokens)
        entry = CachedRun(
            taps={layer: tap.detach() for layer, tap in taps.items()},
            logits=logits.detach(),
            layout=layout,
        )
        self.forward_count += 1
        logger.debug(f"Activation cache miss for '{model.name}' ({tokens.size} tokens)")
        self._entries[key] = entry
        if len(self._entries) > self.max_entries:
            self._entries.popitem(last=False)
        return entry


# --------------------------------------------------------------------------- #
# Bundle
# --------------------------------------------------------------------------- #
class ComponentSet(Module):
    """Named component models; a model may back several modalities."""

    def __init__(self, models: Mapping[str, ComponentModel]):
        super().__init__()
        self.models: Dict[str, ComponentModel] = {}
        for name, model in models.items():
            self.add_module(name, model)
            self.models[name] = model

    def __getitem__(self, name: str) -> ComponentModel:
        return self.models[name]

    def __iter__(self):
        return iter(self.models.items())


class GatsBundle(Module):
    """
    Component models + a GATS module + the modality -> model bindings.

    Parameters
    ----------
    gats : GatsModule
        The K GATS layers
    components : mapping
        Component model name -> model
    bindings : mapping
        Modality id -> component name, or None for static feature streams
    extras : Module, optional
        Further trainable parameters owned by a preset
    """

    def __init__(
        self,
        gats: GatsModule,
        components: Mapping[str, ComponentModel],
        bindings: Mapping[int, Optional[str]],
        extras: Optional[Module] = None,
    ):
        super().__init__()
        self.gats = self.add_module("gats", gats)
        self.components = self.add_module("components", ComponentSet(components))
        self.extras = self.add_module("extras", extras if extras is not None else Module())
        self.bindings: Dict[int, Optional[str]] = dict(bindings)
        config_ids = [s.modality_id for s in gats.config.modalities]
        if sorted(self.bindings) != sorted(config_ids):
            raise GatherError(
                f"bindings cover modalities {sorted(self.bindings)} but the config declares {sorted(config_ids)}"
            )
        for mid, name in self.bindings.items():
            if name is None:
                continue
            model = self.components[name]
            if model.width != gats.config.spec(mid).embed_dim:
                raise ShapeMismatchError(
                    "GatsBundle",
                    (model.width,),
                    (gats.config.spec(mid).embed_dim,),
                    detail=f"model '{name}' width vs modality '{gats.config.spec(mid).name}'",
                )
        self.plan = self._build_plan()
        logger.info(f"Bundle plan: K={self.plan.K} columns={self.plan_columns} rows={self.plan.rows}")

    @property
    def config(self) -> GatsConfig:
        return self.gats.config

    @property
    def plan_columns(self) -> List[int]:
        """Model-backed modality ids in config order; the plan's column order."""
        return [s.modality_id for s in self.config.modalities if self.bindings[s.modality_id] is not None]

    def model_for(self, modality_id: int) -> Optional[ComponentModel]:
        name = self.bindings[modality_id]
        return None if name is None else self.components[name]

    def _build_plan(self) -> InterleavePlan:
        counts = [self.model_for(mid).num_layers for mid in self.plan_columns]
        return build_plan(self.config.K, counts)

    def freeze_components(self, names: Optional[Iterable[str]] = None) -> None:
        targets = list(names) if names is not None else [n for n, _ in self.components]
        for name in targets:
            self.components[name].freeze()

    def frozen_hashes(self) -> Dict[str, str]:
        """Parameter hash of every frozen component model."""
        return {name: model.parameter_hash() for name, model in self.components if model.frozen}


# --------------------------------------------------------------------------- #
# Joint forward
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class Segment:
    """
    One independent forward of a component model.

    Exactly one of ``tokens``, ``num_steps`` or ``cached`` drives it; ``cached``
    is a forward already resolved through an :class:`ActivationCache`.
    """

    tokens: Optional[np.ndarray] = None
    num_steps: Optional[int] = None
    prefix: Optional[Tensor] = None
    cached: Optional[CachedRun] = None


@dataclass
class ModalityInput:
    """
    Everything a modality contributes to one joint forward.

    ``source_index`` gives the global arrival index of every row, segments
    concatenated in order. A static input supplies ``features`` instead of
    segments; they are offered unchanged to every GATS layer.
    """

    modality_id: int
    source_index: np.ndarray
    segments: Tuple[Segment, ...] = ()
    features: Optional[Tensor] = None

    def __post_init__(self):
        self.source_index = np.asarray(self.source_index, dtype=np.int64).reshape(-1)
        self.segments = tuple(self.segments)

    @classmethod
    def of_tokens(cls, modality_id: int, tokens, source_index) -> "ModalityInput":
        return cls(modality_id, source_index, (Segment(tokens=np.asarray(tokens, dtype=np.int64)),))

    @classmethod
    def of_slots(cls, modality_id: int, num_steps: int, source_index) -> "ModalityInput":
        return cls(modality_id, source_index, (Segment(num_steps=num_steps),))

    @classmethod
    def static(cls, modality_id: int, features: Tensor, source_index) -> "ModalityInput":
        return cls(modality_id, source_index, (), features)


@dataclass
class _Run:
    model: ComponentModel
    layout: StreamLayout
    h: Tensor
    depth: int = 0
    cached: Optional[CachedRun] = None

    def advance(self, target: int) -> None:
        if target <= self.depth:
            return
        if self.cached is not None:
            self.h = self.cached.taps[target]
        else:
            self.h = self.model.run_layers(self.h, self.depth, target, self.layout)
        self.depth = target


@dataclass
class JointOutput:
    """Per-modality logits (segments concatenated) and final activation streams."""

    logits: Dict[int, Tensor] = field(default_factory=dict)
    streams: Dict[int, Tensor] = field(default_factory=dict)


def _cacheable(model: ComponentModel, segment: Segment, steered: bool) -> bool:
    return (
        not steered
        and segment.tokens is not None
        and segment.prefix is None
        and model.parameter_count(trainable_only=True) == 0
    )


def _merge(runs: Sequence[_Run]) -> Tensor:
    return runs[0].h if len(runs) == 1 else ops.concat([r.h for r in runs], axis=0)


def joint_forward(
    bundle: GatsBundle,
    inputs: Mapping[int, ModalityInput],
    cache: Optional[ActivationCache] = None,
    steer: Optional[Iterable[int]] = None,
    outputs: Optional[Iterable[int]] = None,
    plan: Optional[InterleavePlan] = None,
) -> JointOutput:
    """
    Run every component model with K GATS layers interleaved.

    After layer ``l_{k,m}`` each model hands its activations to GATS layer k.
    Steered models continue from the updated activations, non-steered models
    from their own. Frozen non-steered token segments are served by ``cache``
    when one is given.

    Parameters
    ----------
    bundle : GatsBundle
        Components, GATS layers and bindings
    inputs : mapping
        Modality id -> :class:`ModalityInput`; configured modalities may be absent
    cache : ActivationCache, optional
        Store for frozen, non-steered forwards
    steer : iterable of int, optional
        Steered set for this call (subset of the configured S)
    outputs : iterable of int, optional
        Modalities whose logits are computed; defaults to every model-backed input
    plan : InterleavePlan, optional
        Overrides the bundle's plan; must match the models' depths

    Raises
    ------
    GatherError
        If an input names a modality the config does not declare
    PlanError
        If ``plan`` disagrees with the component depths
    """
    cfg = bundle.config
    config_ids = [s.modality_id for s in cfg.modalities]
    for mid in inputs:
        if mid not in config_ids:
            raise GatherError(f"input for modality {mid} which the GATS config does not declare")
    plan = plan or bundle.plan
    columns = bundle.plan_columns
    expected = tuple(bundle.model_for(mid).num_layers for mid in columns)
    if tuple(plan.layer_counts) != expected or plan.K != cfg.K:
        raise PlanError(f"plan for K={plan.K}, depths {plan.layer_counts} does not fit K={cfg.K}, depths {expected}")
    steered = set(cfg.steered_ids if steer is None else steer)

    runs: Dict[int, List[_Run]] = {}
    static: Dict[int, Tensor] = {}
    for mid, item in inputs.items():
        spec = cfg.spec(mid)
        model = bundle.model_for(mid)
        if model is None or item.features is not None:
            if item.features is None:
                raise GatherError(f"modality '{spec.name}' has no component model and no static features")
            if item.features.shape != (item.source_index.size, spec.embed_dim):
                raise ShapeMismatchError(
                    "joint_forward", item.features.shape, (item.source_index.size, spec.embed_dim), detail=spec.name
                )
            static[mid] = item.features
            continue
        modality_runs = []
        for segment in item.segments:
            if segment.cached is not None:
                hit = segment.cached
                run = _Run(model, hit.layout, hit.taps[0], cached=None if mid in steered else hit)
                modality_runs.append(run)
            elif cache is not None and _cacheable(model, segment, mid in steered):
                hit = cache.lookup(model, segment.tokens)
                modality_runs.append(_Run(model, hit.layout, hit.taps[0], cached=hit))
            else:
                h, layout = model.embed(tokens=segment.tokens, num_steps=segment.num_steps, prefix=segment.prefix)
                modality_runs.append(_Run(model, layout, h))
        rows = sum(r.layout.length for r in modality_runs)
        if rows != item.source_index.size:
            raise ShapeMismatchError("joint_forward", (rows,), item.source_index.shape, detail=f"{spec.name} rows vs sources")
        if modality_runs:
            runs[mid] = modality_runs

    for k in range(1, cfg.K + 1):
        insertion = dict(zip(columns, plan.for_layer(k)))
        streams: Dict[int, ModalityStream] = {}
        for mid, modality_runs in runs.items():
            for run in modality_runs:
                run.advance(insertion[mid])
            streams[mid] = ModalityStream(inputs[mid].source_index, _merge(modality_runs))
        for mid, features in static.items():
            streams[mid] = ModalityStream(inputs[mid].source_index, features)

        updated = bundle.gats[k].forward_streams(streams, steer=steered)
        for mid, modality_runs in runs.items():
            if updated[mid] is streams[mid]:
                continue
            activations = updated[mid].activations
            if len(modality_runs) == 1:
                modality_runs[0].h = activations
                modality_runs[0].cached = None
                continue
            start = 0
            for run in modality_runs:
                run.h = ops.take(activations, np.arange(start, start + run.layout.length))
                run.cached = None
                start += run.layout.length

    wanted = set(runs) if outputs is None else set(outputs) & set(runs)
    result = JointOutput()
    for mid, modality_runs in runs.items():
        logits = []
        for run in modality_runs:
            run.advance(run.model.num_layers)
            if mid in wanted:
                logits.append(run.cached.logits if run.cached is not None else run.model.readout(run.h, run.layout))
        result.streams[mid] = _merge(modality_runs)
        if logits:
            result.logits[mid] = logits[0] if len(logits) == 1 else ops.concat(logits, axis=0)
    for mid, features in static.items():
        result.streams[mid] = features
    return result


# --------------------------------------------------------------------------- #
# Substitution and latency
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class SubstitutionReport:
    old_gats_parameters: int
    new_gats_parameters: int
    trainable_parameters: int
    frozen_parameters: int


def substitute_gats(
    old: GatsBundle,
    new_config: GatsConfig,
    rng: np.random.Generator,
    trainable_components: Iterable[str] = (),
) -> Tuple[GatsBundle, SubstitutionReport]:
    """
    Replace a bundle's GATS module with a freshly initialised one.

    Component models and bundle extras (such as a learned image-position
    token) are kept and frozen, except those listed in ``trainable_components``;
    list ``"extras"`` to keep the extras trainable. The old GATS parameters are
    discarded.

    Raises
    ------
    GatherError
        If the new config declares a different modality set
    """
    old_names = {s.modality_id: s.name for s in old.config.modalities}
    new_names = {s.modality_id: s.name for s in new_config.modalities}
    if old_names != new_names:
        raise GatherError(f"modality set mismatch: bundle has {old_names}, new config has {new_names}")

    keep_trainable = set(trainable_components)
    for name, model in old.components:
        if name in keep_trainable:
            model.unfreeze()
        else:
            model.freeze()
    if "extras" in keep_trainable:
        old.extras.unfreeze()
    else:
        old.extras.freeze()
    bundle = GatsBundle(
        GatsModule(new_config, rng),
        {name: model for name, model in old.components},
        old.bindings,
        extras=old.extras,
    )
    report = SubstitutionReport(
        old_gats_parameters=old.gats.parameter_count(),
        new_gats_parameters=bundle.gats.parameter_count(),
        trainable_parameters=bundle.parameter_count(trainable_only=True),
        frozen_parameters=bundle.parameter_count() - bundle.parameter_count(trainable_only=True),
    )
    logger.info(
        f"Substituted GATS module: {report.old_gats_parameters} -> {report.new_gats_parameters} parameters, "
        f"{report.trainable_parameters} trainable, {report.frozen_parameters} frozen"
    )
    return bundle, report


def measure_token_latency(
    bundle: GatsBundle,
    inputs: Mapping[int, ModalityInput],
    modality_id: int,
    cache: Optional[ActivationCache] = None,
    repeats: int = 7,
) -> float:
    """Median wall time in seconds of a joint forward that reads out ``modality_id`` only."""
    timings = []
    for _ in range(max(1, repeats)):
        start = time.perf_counter()
        joint_forward(bundle, inputs, cache=cache, outputs=[modality_id])
        timings.append(time.perf_counter() - start)
    return float(np.median(timings))

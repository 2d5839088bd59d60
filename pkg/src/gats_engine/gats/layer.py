# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
The Gather-Attend-Scatter layer.

A GATS layer reads a multimodal stream of activations, keeps only the last
``N_m`` elements of every modality (gather), projects them to a shared width
``d`` and runs one pre-layer-norm transformer block over them (attend), then
adds a gated, back-projected update to the queried elements (scatter):

    x_i <- x_i + g_m(z_i) * r_m(z_i),   z_i = FFW(Attention(p_m(x_i), G))

Two call styles share one kernel:

- element-level: :func:`gather`, :func:`attend`, :func:`scatter`,
  :func:`gats_layer_forward` over a :class:`TaggedSequence`;
- stream-level: :meth:`GatsLayer.forward_streams` over per-modality activation
  matrices, used by the composer and by :class:`GatsLayerStream`.

Training evaluates every steered element against the gather set of the prefix
that ends at it, which is exactly what streaming inference computes one arrival
at a time.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from gats_engine.core import ops
from gats_engine.core.exceptions import AlignmentError, GatherError, ShapeMismatchError
from gats_engine.core.module import Module, ParameterFactory
from gats_engine.core.tensor import Tensor
from gats_engine.models.gats_models import GatsConfig, ModalitySpec

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------- #
# Sequences
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class TaggedElement:
    """One activation vector tagged with its modality and global arrival index."""

    modality_id: int
    source_index: int
    payload: Tensor


class TaggedSequence:
    """Ordered multimodal stream; source indices strictly increase."""

    def __init__(self, elements: Iterable[TaggedElement] = ()):
        self.elements: List[TaggedElement] = list(elements)
        for prev, cur in zip(self.elements, self.elements[1:]):
            if cur.source_index <= prev.source_index:
                raise GatherError(
                    f"source indices must strictly increase, got {prev.source_index} then {cur.source_index}"
                )

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self) -> Iterator[TaggedElement]:
        return iter(self.elements)

    def __getitem__(self, i: int) -> TaggedElement:
        return self.elements[i]

    def prefix(self, end: int) -> "TaggedSequence":
        """Elements ``0..end`` inclusive."""
        return TaggedSequence(self.elements[: end + 1])

    def modality_ids(self) -> List[int]:
        return [e.modality_id for e in self.elements]

    def with_payloads(self, updates: Mapping[int, Tensor]) -> "TaggedSequence":
        """Copy of the sequence with the payloads at the given positions replaced."""
        return TaggedSequence(
            TaggedElement(e.modality_id, e.source_index, updates[i]) if i in updates else e
            for i, e in enumerate(self.elements)
        )


@dataclass(frozen=True)
class GatherSet:
    """
    Result of the gather step for the prefix ending at the last element.

    ``positions`` index into ``source``; ``slots`` are recency ranks inside each
    modality's local window (0 = oldest); ``untouched`` lists the positions that
    were not selected.
    """

    source: TaggedSequence
    positions: Tuple[int, ...]
    slots: Tuple[int, ...]
    untouched: Tuple[int, ...]

    @property
    def elements(self) -> Tuple[TaggedElement, ...]:
        return tuple(self.source[i] for i in self.positions)

    def __len__(self) -> int:
        return len(self.positions)


def _context_lengths(specs: Sequence[ModalitySpec]) -> Dict[int, int]:
    return {s.modality_id: s.context_len for s in specs}


def gather(seq: TaggedSequence, specs: Sequence[ModalitySpec]) -> GatherSet:
    """
    Select the largest subsequence holding at most ``N_m`` elements of modality m
    and closed under "later elements of the same modality".

    Raises
    ------
    GatherError
        If an element's modality is not declared in ``specs``
    """
    limits = _context_lengths(specs)
    taken: Dict[int, int] = {m: 0 for m in limits}
    selected: List[int] = []
    for pos in range(len(seq) - 1, -1, -1):
        mid = seq[pos].modality_id
        if mid not in limits:
            raise GatherError(f"unknown modality id {mid} at position {pos}")
        if taken[mid] < limits[mid]:
            taken[mid] += 1
            selected.append(pos)
    selected.reverse()

    chosen = set(selected)
    seen: Dict[int, int] = {m: 0 for m in limits}
    slots = []
    for pos in selected:
        mid = seq[pos].modality_id
        slots.append(seen[mid])
        seen[mid] += 1
    untouched = tuple(i for i in range(len(seq)) if i not in chosen)
    return GatherSet(seq, tuple(selected), tuple(slots), untouched)


# --------------------------------------------------------------------------- #
# Windows
# --------------------------------------------------------------------------- #
@dataclass
class WindowBatch:
    """
    Index arrays describing one gather window per query.

    All arrays have shape ``(Q, W)`` with ``W = sum(N_m)``; padded entries have
    ``valid == False`` and point at row 0.
    """

    rows: np.ndarray
    slots: np.ndarray
    modality_rows: np.ndarray
    valid: np.ndarray
    query_pos: np.ndarray

    @property
    def num_queries(self) -> int:
        return int(self.rows.shape[0])


def build_windows(
    sources: Mapping[int, np.ndarray],
    order: Sequence[int],
    limits: Mapping[int, int],
    query_modality: np.ndarray,
    query_local: np.ndarray,
) -> WindowBatch:
    """
    Build the prefix gather window of every query.

    Parameters
    ----------
    sources : mapping
        Modality id -> increasing source indices of that modality's rows
    order : sequence of int
        Modality ids in the order their rows are concatenated
    limits : mapping
        Modality id -> context length N_m
    query_modality, query_local : np.ndarray
        Modality id and row (within that modality) of every query
    """
    q_count = len(query_modality)
    query_source = np.array(
        [sources[int(m)][int(r)] for m, r in zip(query_modality, query_local)], dtype=np.int64
    ).reshape(q_count)

    row_blocks, slot_blocks, mod_blocks, valid_blocks, src_blocks = [], [], [], [], []
    row_offset = 0
    for mod_row, mid in enumerate(order):
        src = np.asarray(sources[mid], dtype=np.int64)
        n_m = int(limits[mid])
        counts = np.searchsorted(src, query_source, side="right")
        width = np.minimum(counts, n_m)
        j = np.arange(n_m)[None, :]
        local = counts[:, None] - n_m + j
        valid = local >= 0
        slot = j - (n_m - width[:, None])
        safe_local = np.where(valid, local, 0)
        row_blocks.append(np.where(valid, row_offset + safe_local, 0))
        slot_blocks.append(np.where(valid, slot, 0))
        mod_blocks.append(np.full((q_count, n_m), mod_row, dtype=np.int64))
        valid_blocks.append(valid)
        src_blocks.append(np.where(valid, src[safe_local] if src.size else 0, np.iinfo(np.int64).max))
        row_offset += src.size

    rows = np.concatenate(row_blocks, axis=1)
    slots = np.concatenate(slot_blocks, axis=1)
    mods = np.concatenate(mod_blocks, axis=1)
    valid = np.concatenate(valid_blocks, axis=1)
    srcs = np.concatenate(src_blocks, axis=1)

    perm = np.argsort(srcs, axis=1, kind="stable")
    take_sorted = lambda a: np.take_along_axis(a, perm, axis=1)  # noqa: E731
    rows, slots, mods, valid, srcs = map(take_sorted, (rows, slots, mods, valid, srcs))
    query_pos = np.argmax(srcs == query_source[:, None], axis=1)
    return WindowBatch(rows=rows, slots=slots, modality_rows=mods, valid=valid, query_pos=query_pos)


# --------------------------------------------------------------------------- #
# Parameters
# --------------------------------------------------------------------------- #
class GatsLayer(Module):
    """
    Parameters of one GATS layer.

    Holds ``p_m`` for every modality, ``r_m`` and ``g_m`` for steered
    modalities, a pre-layer-norm attention + GELU feed-forward block of width
    ``d``, per-modality slot tables of length ``N_m`` and per-modality type
    vectors.
    """

    def __init__(self, config: GatsConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        d = config.d
        init = ParameterFactory(rng)
        reg = self.register_parameter

        for spec in config.modalities:
            name = spec.name
            if not spec.identity_projection:
                reg(f"p.{name}.weight", init.normal((spec.embed_dim, d), std=1.0 / math.sqrt(spec.embed_dim)))
                reg(f"p.{name}.bias", init.zeros((d,)))
            reg(f"pos.{name}", init.normal((spec.context_len, d)))
            reg(f"type.{name}", init.normal((d,)))
            if spec.steered:
                if not spec.identity_projection:
                    reg(f"r.{name}.weight", init.normal((d, spec.embed_dim), std=1.0 / math.sqrt(d)))
                    reg(f"r.{name}.bias", init.zeros((spec.embed_dim,)))
                reg(f"g.{name}.ln_gain", init.ones((d,)))
                reg(f"g.{name}.ln_bias", init.zeros((d,)))
                reg(f"g.{name}.weight", init.zeros((d, 1)))
                bias = config.gate_init_bias if math.isfinite(config.gate_init_bias) else 0.0
                reg(f"g.{name}.bias", init.full((1,), bias))

        reg("ln1.gain", init.ones((d,)))
        reg("ln1.bias", init.zeros((d,)))
        for proj in ("q", "k", "v", "o"):
            reg(f"attn.{proj}.weight", init.normal((d, d), std=1.0 / math.sqrt(d)))
            reg(f"attn.{proj}.bias", init.zeros((d,)))
        reg("ln2.gain", init.ones((d,)))
        reg("ln2.bias", init.zeros((d,)))
        reg("ffw.in.weight", init.normal((d, config.ffw_hidden), std=1.0 / math.sqrt(d)))
        reg("ffw.in.bias", init.zeros((config.ffw_hidden,)))
        reg("ffw.out.weight", init.normal((config.ffw_hidden, d), std=1.0 / math.sqrt(config.ffw_hidden)))
        reg("ffw.out.bias", init.zeros((d,)))

    def param(self, name: str) -> Tensor:
        return self._parameters[name]

    def has_param(self, name: str) -> bool:
        return name in self._parameters

    # --- projection ---
    def project(self, spec: ModalitySpec, x: Tensor) -> Tensor:
        """p_m over rows of ``x`` (shape ``(n, embed_dim)``)."""
        if x.shape[-1] != spec.embed_dim:
            raise ShapeMismatchError(
                "attend", x.shape, (spec.embed_dim,), detail=f"modality '{spec.name}' width"
            )
        if spec.identity_projection:
            return x
        return ops.linear(x, self.param(f"p.{spec.name}.weight"), self.param(f"p.{spec.name}.bias"))

    # --- attention ---
    def attend_windows(self, projected: Tensor, windows: WindowBatch) -> Tensor:
        """
        Run the attention block for every query window.

        Parameters
        ----------
        projected : Tensor
            ``(n_rows, d)`` projected activations, modalities concatenated in
            config order
        windows : WindowBatch
            Per-query gather windows over the rows of ``projected``

        Returns
        -------
        Tensor
            ``(Q, d)`` block outputs z, one per query
        """
        cfg = self.config
        d, heads = cfg.d, cfg.heads
        head_dim = d // heads
        q_count, width = windows.rows.shape

        pos_table = ops.concat([self.param(f"pos.{s.name}") for s in cfg.modalities], axis=0)
        pos_offsets = np.cumsum([0] + [s.context_len for s in cfg.modalities])[:-1]
        type_table = ops.stack([self.param(f"type.{s.name}") for s in cfg.modalities])

        x = ops.take(projected, windows.rows)
        x = ops.add(x, ops.take(pos_table, np.where(windows.valid, pos_offsets[windows.modality_rows] + windows.slots, 0)))
        x = ops.add(x, ops.take(type_table, windows.modality_rows))

        flat_index = np.arange(q_count) * width + windows.query_pos
        x_query = ops.take(ops.reshape(x, (q_count * width, d)), flat_index)

        h = ops.layernorm(x, self.param("ln1.gain"), self.param("ln1.bias"))
        h_query = ops.take(ops.reshape(h, (q_count * width, d)), flat_index)

        q = ops.linear(h_query, self.param("attn.q.weight"), self.param("attn.q.bias"))
        k = ops.linear(h, self.param("attn.k.weight"), self.param("attn.k.bias"))
        v = ops.linear(h, self.param("attn.v.weight"), self.param("attn.v.bias"))

        q = ops.reshape(q, (q_count, heads, 1, head_dim))
        k = ops.transpose(ops.reshape(k, (q_count, width, heads, head_dim)), (0, 2, 3, 1))
        v = ops.transpose(ops.reshape(v, (q_count, width, heads, head_dim)), (0, 2, 1, 3))

        scores = ops.scale(ops.matmul(q, k), 1.0 / math.sqrt(head_dim))
        mask = np.broadcast_to(windows.valid[:, None, None, :], scores.shape)
        probs = ops.softmax(scores, axis=-1, mask=mask)
        attended = ops.reshape(ops.matmul(probs, v), (q_count, d))

        u = ops.add(x_query, ops.linear(attended, self.param("attn.o.weight"), self.param("attn.o.bias")))
        hidden = ops.gelu(
            ops.linear(
                ops.layernorm(u, self.param("ln2.gain"), self.param("ln2.bias")),
                self.param("ffw.in.weight"),
                self.param("ffw.in.bias"),
            )
        )
        return ops.add(u, ops.linear(hidden, self.param("ffw.out.weight"), self.param("ffw.out.bias")))

    # --- gate and readout ---
    def gate(self, spec: ModalitySpec, z: Tensor) -> Tensor:
        """g_m(z) = sigmoid(w . layernorm(z) + b); shape ``(n,)``."""
        name = spec.name
        normed = ops.layernorm(z, self.param(f"g.{name}.ln_gain"), self.param(f"g.{name}.ln_bias"))
        logits = ops.linear(normed, self.param(f"g.{name}.weight"), self.param(f"g.{name}.bias"))
        return ops.reshape(ops.sigmoid(logits), (z.shape[0],))

    def back_project(self, spec: ModalitySpec, z: Tensor) -> Tensor:
        """r_m(z); shape ``(n, embed_dim)``."""
        if spec.identity_projection:
            return z
        return ops.linear(z, self.param(f"r.{spec.name}.weight"), self.param(f"r.{spec.name}.bias"))

    def scatter_rows(self, spec: ModalitySpec, x: Tensor, z: Tensor) -> Tensor:
        """``x + g_m(z) * r_m(z)`` row-wise."""
        return ops.add(x, ops.mul_rows(self.back_project(spec, z), self.gate(spec, z)))

    # --- stream-level forward ---
    def forward_streams(
        self,
        streams: Mapping[int, "ModalityStream"],
        steer: Optional[Iterable[int]] = None,
        queries: Optional[Mapping[int, np.ndarray]] = None,
    ) -> Dict[int, "ModalityStream"]:
        """
        Apply the layer to per-modality activation matrices.

        Parameters
        ----------
        streams : mapping
            Modality id -> :class:`ModalityStream`; every id must be configured
        steer : iterable of int, optional
            Steered modality ids for this call (subset of S); defaults to S
        queries : mapping, optional
            Modality id -> local row indices to query; defaults to every row of
            every steered modality (causal training mode)

        Returns
        -------
        dict
            Updated streams. Non-steered streams and non-queried rows are the
            very same tensors/values as the input.
        """
        cfg = self.config
        for mid in streams:
            if mid not in {s.modality_id for s in cfg.modalities}:
                raise GatherError(f"stream for unknown modality id {mid}")
        steered = set(cfg.steered_ids if steer is None else steer)
        unknown = steered - set(cfg.steered_ids)
        if unknown:
            raise GatherError(f"modalities {sorted(unknown)} are not in the configured steered set")

        if queries is None:
            queries = {
                mid: np.arange(stream.length) for mid, stream in streams.items() if mid in steered
            }
        else:
            queries = {mid: np.asarray(rows, dtype=np.int64) for mid, rows in queries.items() if mid in steered}
        queries = {mid: rows for mid, rows in queries.items() if rows.size}

        result = dict(streams)
        if cfg.gates_disabled or not queries:
            return result

        order = [s.modality_id for s in cfg.modalities]
        sources = {
            mid: (streams[mid].source_index if mid in streams else np.zeros(0, dtype=np.int64))
            for mid in order
        }
        present = [mid for mid in order if mid in streams and streams[mid].length]
        projected = ops.concat([self.project(cfg.spec(mid), streams[mid].activations) for mid in present], axis=0)

        query_mod = np.concatenate([np.full(rows.size, mid) for mid, rows in queries.items()])
        query_local = np.concatenate(list(queries.values()))
        windows = build_windows(
            {mid: sources[mid] for mid in present},
            present,
            {mid: cfg.spec(mid).context_len for mid in present},
            query_mod,
            query_local,
        )
        # Slot tables and type vectors are indexed by configured modality order.
        config_row = np.array([order.index(mid) for mid in present], dtype=np.int64)
        windows.modality_rows = config_row[windows.modality_rows]

        z = self.attend_windows(projected, windows)

        start = 0
        for mid, rows in queries.items():
            spec = cfg.spec(mid)
            z_m = ops.take(z, np.arange(start, start + rows.size))
            start += rows.size
            stream = streams[mid]
            updated = self.scatter_rows(spec, ops.take(stream.activations, rows), z_m)
            result[mid] = stream.replace_rows(rows, updated)
        return result


@dataclass
class ModalityStream:
    """Activation matrix of one modality plus the global arrival index of each row."""

    source_index: np.ndarray
    activations: Tensor

    def __post_init__(self):
        self.source_index = np.asarray(self.source_index, dtype=np.int64).reshape(-1)
        if self.activations.ndim != 2 or self.activations.shape[0] != self.source_index.size:
            raise ShapeMismatchError("ModalityStream", self.activations.shape, self.source_index.shape)
        if np.any(np.diff(self.source_index) <= 0):
            raise GatherError("source indices within a modality must strictly increase")

    @property
    def length(self) -> int:
        return int(self.source_index.size)

    def replace_rows(self, rows: np.ndarray, values: Tensor) -> "ModalityStream":
        """Copy of the stream whose ``rows`` are taken from ``values``; other rows are copied exactly."""
        rows = np.asarray(rows, dtype=np.int64)
        if rows.size == self.length and np.array_equal(rows, np.arange(self.length)):
            return ModalityStream(self.source_index, values)
        selector = np.arange(self.length)
        selector[rows] = self.length + np.arange(rows.size)
        merged = ops.take(ops.concat([self.activations, values], axis=0), selector)
        return ModalityStream(self.source_index, merged)


# --------------------------------------------------------------------------- #
# Element-level API
# --------------------------------------------------------------------------- #
def _spec_map(specs: Sequence[ModalitySpec]) -> Dict[int, ModalitySpec]:
    return {s.modality_id: s for s in specs}


def _check_payload(spec: ModalitySpec, element: TaggedElement) -> None:
    if element.payload.shape != (spec.embed_dim,):
        raise ShapeMismatchError(
            "attend", element.payload.shape, (spec.embed_dim,), detail=f"modality '{spec.name}' width"
        )


def attend(g: GatherSet, params: GatsLayer, query_mask: Sequence[bool]) -> List[Tensor]:
    """
    Attention for the queried elements of one gather set.

    Every element of ``g`` is projected and used as key/value; only elements with
    ``query_mask`` True produce an output. Attention is bidirectional inside G.

    Returns
    -------
    list of Tensor
        One ``(d,)`` vector per queried element, in gather order
    """
    cfg = params.config
    specs = _spec_map(cfg.modalities)
    query_mask = list(query_mask)
    if len(query_mask) != len(g):
        raise AlignmentError(f"query mask has {len(query_mask)} entries for {len(g)} gathered elements")
    for element, queried in zip(g.elements, query_mask):
        if element.modality_id not in specs:
            raise GatherError(f"unknown modality id {element.modality_id}")
        _check_payload(specs[element.modality_id], element)
        if queried and not specs[element.modality_id].steered:
            raise AlignmentError(
                f"modality '{specs[element.modality_id].name}' is not steered and cannot be queried"
            )
    queried_positions = [i for i, q in enumerate(query_mask) if q]
    if not queried_positions:
        return []

    order = [s.modality_id for s in cfg.modalities]
    config_row = {mid: i for i, mid in enumerate(order)}
    projected_rows = [
        params.project(specs[e.modality_id], ops.reshape(e.payload, (1, e.payload.shape[0])))
        for e in g.elements
    ]
    projected = ops.concat(projected_rows, axis=0)

    width = len(g)
    q_count = len(queried_positions)
    windows = WindowBatch(
        rows=np.tile(np.arange(width), (q_count, 1)),
        slots=np.tile(np.asarray(g.slots, dtype=np.int64), (q_count, 1)),
        modality_rows=np.tile(np.array([config_row[e.modality_id] for e in g.elements]), (q_count, 1)),
        valid=np.ones((q_count, width), dtype=bool),
        query_pos=np.asarray(queried_positions, dtype=np.int64),
    )
    z = params.attend_windows(projected, windows)
    return [ops.reshape(ops.take(z, np.array([i])), (cfg.d,)) for i in range(q_count)]


def scatter(
    g: GatherSet,
    z: Sequence[Tensor],
    params: GatsLayer,
    query_mask: Optional[Sequence[bool]] = None,
) -> TaggedSequence:
    """
    Write ``x_i + g_m(z_i) * r_m(z_i)`` back for every queried element.

    Elements outside G, and elements of G that were not queried, keep their
    original payload objects.

    Raises
    ------
    AlignmentError
        If ``z`` does not have one entry per queried element
    """
    cfg = params.config
    specs = _spec_map(cfg.modalities)
    if query_mask is None:
        query_mask = [specs[e.modality_id].steered for e in g.elements]
    queried = [pos for pos, q in zip(g.positions, query_mask) if q]
    if len(z) != len(queried):
        raise AlignmentError(f"{len(z)} attend outputs for {len(queried)} queried elements")
    if cfg.gates_disabled:
        return g.source

    updates: Dict[int, Tensor] = {}
    for pos, z_i in zip(queried, z):
        element = g.source[pos]
        spec = specs[element.modality_id]
        if z_i.shape != (cfg.d,):
            raise AlignmentError(f"attend output at position {pos} has shape {z_i.shape}, expected ({cfg.d},)")
        row = params.scatter_rows(spec, ops.reshape(element.payload, (1, spec.embed_dim)), ops.reshape(z_i, (1, cfg.d)))
        updates[pos] = ops.reshape(row, (spec.embed_dim,))
    return g.source.with_payloads(updates)


def sequence_to_streams(seq: TaggedSequence, specs: Sequence[ModalitySpec]) -> Tuple[Dict[int, ModalityStream], Dict[int, List[int]]]:
    """Group a tagged sequence into per-modality matrices; also return each row's sequence position."""
    spec_map = _spec_map(specs)
    positions: Dict[int, List[int]] = {}
    for pos, e in enumerate(seq):
        if e.modality_id not in spec_map:
            raise GatherError(f"unknown modality id {e.modality_id} at position {pos}")
        _check_payload(spec_map[e.modality_id], e)
        positions.setdefault(e.modality_id, []).append(pos)
    streams = {
        mid: ModalityStream(
            np.array([seq[p].source_index for p in rows], dtype=np.int64),
            ops.stack([seq[p].payload for p in rows]),
        )
        for mid, rows in positions.items()
    }
    return streams, positions


def gats_layer_forward(
    seq: TaggedSequence,
    params: GatsLayer,
    specs: Optional[Sequence[ModalitySpec]] = None,
) -> TaggedSequence:
    """
    gather -> attend -> scatter for every steered element against its own prefix.

    This is the causal batched (training) evaluation; it equals replaying the
    sequence one element at a time through :class:`GatsLayerStream`.
    """
    specs = list(specs) if specs is not None else list(params.config.modalities)
    streams, positions = sequence_to_streams(seq, specs)
    if params.config.gates_disabled:
        return seq
    updated = params.forward_streams(streams)
    changes: Dict[int, Tensor] = {}
    for mid, stream in updated.items():
        if stream is streams[mid]:
            continue
        for row, pos in enumerate(positions[mid]):
            changes[pos] = ops.reshape(ops.take(stream.activations, np.array([row])), (stream.activations.shape[1],))
    return seq.with_payloads(changes)


@dataclass
class GatsLayerStream:
    """
    Streaming evaluation of one GATS layer.

    Keeps the layer's pre-update inputs seen so far and, on every call to
    :meth:`push`, queries only the newly arrived steered elements.
    """

    layer: GatsLayer
    steer: Optional[Tuple[int, ...]] = None
    _sources: Dict[int, List[int]] = field(default_factory=dict)
    _rows: Dict[int, List[Tensor]] = field(default_factory=dict)

    def push(self, elements: Sequence[TaggedElement]) -> List[TaggedElement]:
        """Append ``elements`` (in arrival order) and return them with GATS updates applied."""
        specs = _spec_map(self.layer.config.modalities)
        new_rows: Dict[int, List[int]] = {}
        for e in elements:
            if e.modality_id not in specs:
                raise GatherError(f"unknown modality id {e.modality_id}")
            _check_payload(specs[e.modality_id], e)
            history = self._sources.setdefault(e.modality_id, [])
            if history and e.source_index <= history[-1]:
                raise GatherError("stream elements must arrive in increasing source order")
            new_rows.setdefault(e.modality_id, []).append(len(history))
            history.append(e.source_index)
            self._rows.setdefault(e.modality_id, []).append(e.payload)

        streams = {
            mid: ModalityStream(np.array(src, dtype=np.int64), ops.stack(self._rows[mid]))
            for mid, src in self._sources.items()
        }
        updated = self.layer.forward_streams(streams, steer=self.steer, queries={m: np.array(r) for m, r in new_rows.items()})

        out = []
        cursor: Dict[int, int] = {}
        for e in elements:
            k = cursor.get(e.modality_id, 0)
            cursor[e.modality_id] = k + 1
            row = new_rows[e.modality_id][k]
            stream = updated[e.modality_id]
            if stream is streams[e.modality_id]:
                out.append(e)
                continue
            payload = ops.reshape(ops.take(stream.activations, np.array([row])), (stream.activations.shape[1],))
            out.append(TaggedElement(e.modality_id, e.source_index, payload))
        return out


class GatsModule(Module):
    """K GATS layers sharing one configuration."""

    def __init__(self, config: GatsConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        self.layers: List[GatsLayer] = []
        for k in range(config.num_layers):
            layer = GatsLayer(config, rng)
            self.add_module(f"layer{k + 1}", layer)
            self.layers.append(layer)

    def __getitem__(self, k: int) -> GatsLayer:
        """1-based layer access."""
        return self.layers[k - 1]

    def __len__(self) -> int:
        return len(self.layers)

    def with_modality(self, spec: ModalitySpec, rng: np.random.Generator) -> "GatsModule":
        """
        Copy of this module with one more modality.

        Existing parameters are transferred with their trainable flags; only the
        new modality's tables are freshly initialised, and they start trainable.
        """
        data = self.config.model_dump()
        data["modalities"].append(spec.model_dump())
        extended = GatsModule(GatsConfig.model_validate(data), rng)
        extended.load_state_dict(self.state_dict(), strict=False)
        source = dict(self.named_parameters())
        for name, tensor in extended.named_parameters():
            if name in source:
                tensor.requires_grad = source[name].requires_grad
        logger.info(
            f"Added modality '{spec.name}': {extended.parameter_count() - self.parameter_count()} new parameters"
        )
        return extended

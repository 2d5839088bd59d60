# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Toy component transformers.

Pre-layer-norm blocks with GELU feed-forward layers. Token models tie their
output head to the input embedding table; the action model reads learned input
slots and ends in a two-layer MLP over discrete actions.

Every model exposes the stream after each layer ("taps") and accepts a
replacement stream after any layer ("injection"); that is all the composer
needs to interleave GATS layers.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from gats_engine.core import ops
from gats_engine.core.exceptions import ShapeMismatchError
from gats_engine.core.module import Module, ParameterFactory
from gats_engine.core.tensor import Tensor
from gats_engine.models.component_models import ComponentSpec

logger = logging.getLogger(__name__)


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


def build_factorized_mask(frame_size: int, num_frames: int, layer_index: int) -> np.ndarray:
    """
    Dense time-space factorised attention mask over ``num_frames * frame_size`` tokens.

    Tokens are laid out frame-major. ``layer_index`` is the 0-based position of
    the layer in its stack: even layers attend within the same frame, odd layers
    attend to the same spatial slot in the current and earlier frames.
    """
    n = frame_size * num_frames
    frame = np.arange(n) // frame_size
    slot = np.arange(n) % frame_size
    if layer_index % 2 == 0:
        return frame[:, None] == frame[None, :]
    return (slot[:, None] == slot[None, :]) & (frame[None, :] <= frame[:, None])


@dataclass(frozen=True)
class StreamLayout:
    """Shape of a component model's token stream."""

    length: int
    frame_size: int = 1
    num_frames: int = 1

    @property
    def framed(self) -> bool:
        return self.frame_size > 1 or self.num_frames > 1


class TransformerBlock(Module):
    """Pre-LN self-attention + GELU feed-forward with residuals around each."""

    def __init__(self, width: int, heads: int, ffw_hidden: int, init: ParameterFactory):
        super().__init__()
        self.width = width
        self.heads = heads
        reg = self.register_parameter
        reg("ln1.gain", init.ones((width,)))
        reg("ln1.bias", init.zeros((width,)))
        for proj in ("q", "k", "v", "o"):
            reg(f"attn.{proj}.weight", init.normal((width, width), std=1.0 / math.sqrt(width)))
            reg(f"attn.{proj}.bias", init.zeros((width,)))
        reg("ln2.gain", init.ones((width,)))
        reg("ln2.bias", init.zeros((width,)))
        reg("ffw.in.weight", init.normal((width, ffw_hidden), std=1.0 / math.sqrt(width)))
        reg("ffw.in.bias", init.zeros((ffw_hidden,)))
        reg("ffw.out.weight", init.normal((ffw_hidden, width), std=1.0 / math.sqrt(ffw_hidden)))
        reg("ffw.out.bias", init.zeros((width,)))

    def p(self, name: str) -> Tensor:
        return self._parameters[name]

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        """``x`` has shape ``(B, S, D)``; ``mask`` has shape ``(S, S)``."""
        batch, length, width = x.shape
        head_dim = width // self.heads
        h = ops.layernorm(x, self.p("ln1.gain"), self.p("ln1.bias"))

        def split(t: Tensor) -> Tensor:
            return ops.transpose(ops.reshape(t, (batch, length, self.heads, head_dim)), (0, 2, 1, 3))

        q = split(ops.linear(h, self.p("attn.q.weight"), self.p("attn.q.bias")))
        k = split(ops.linear(h, self.p("attn.k.weight"), self.p("attn.k.bias")))
        v = split(ops.linear(h, self.p("attn.v.weight"), self.p("attn.v.bias")))
        scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(head_dim))
        probs = ops.softmax(scores, axis=-1, mask=np.broadcast_to(mask, scores.shape))
        attended = ops.reshape(ops.transpose(ops.matmul(probs, v), (0, 2, 1, 3)), (batch, length, width))
        x = ops.add(x, ops.linear(attended, self.p("attn.o.weight"), self.p("attn.o.bias")))

        hidden = ops.gelu(
            ops.linear(ops.layernorm(x, self.p("ln2.gain"), self.p("ln2.bias")), self.p("ffw.in.weight"), self.p("ffw.in.bias"))
        )
        return ops.add(x, ops.linear(hidden, self.p("ffw.out.weight"), self.p("ffw.out.bias")))


class ComponentModel(Module):
    """
    A layered transformer over one modality.

    Parameters
    ----------
    spec : ComponentSpec
        Architecture description
    rng : np.random.Generator
        Initialisation randomness
    """

    def __init__(self, spec: ComponentSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        init = ParameterFactory(rng)
        width = spec.embed_dim
        reg = self.register_parameter

        if spec.input_kind == "tokens":
            reg("embed.tokens", init.normal((spec.vocab_size, width)))
        else:
            reg("embed.slots", init.normal((spec.slots_per_step, width)))
        if self.framed:
            # learned slots already tell the slots of a step apart
            if spec.input_kind == "tokens":
                reg("embed.frame_slot", init.normal((spec.tokens_per_frame, width)))
            reg("embed.time", init.normal((spec.max_frames, width)))
        else:
            reg("embed.position", init.normal((spec.max_positions, width)))

        self.blocks = []
        for i in range(spec.num_layers):
            block = TransformerBlock(width, spec.heads, spec.ffw_hidden, init)
            self.add_module(f"block{i + 1}", block)
            self.blocks.append(block)

        reg("final_ln.gain", init.ones((width,)))
        reg("final_ln.bias", init.zeros((width,)))
        if spec.head == "action_mlp":
            reg("head.hidden.weight", init.normal((width, spec.mlp_hidden), std=1.0 / math.sqrt(width)))
            reg("head.hidden.bias", init.zeros((spec.mlp_hidden,)))
            reg("head.out.weight", init.normal((spec.mlp_hidden, spec.num_actions), std=1.0 / math.sqrt(spec.mlp_hidden)))
            reg("head.out.bias", init.zeros((spec.num_actions,)))

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def num_layers(self) -> int:
        return self.spec.num_layers

    @property
    def width(self) -> int:
        return self.spec.embed_dim

    @property
    def framed(self) -> bool:
        """Frame-structured inputs: token frames (time_space) or slot steps."""
        return self.spec.mask_mode == "time_space" or self.spec.input_kind == "slots"

    def fingerprint(self) -> str:
        """Identity of the current weights; changes whenever any parameter changes."""
        return f"{self.spec.name}:{self.parameter_hash()}"

    def p(self, name: str) -> Tensor:
        return self._parameters[name]

    # --- embedding ---
    def embed(
        self,
        tokens: Optional[np.ndarray] = None,
        num_steps: Optional[int] = None,
        prefix: Optional[Tensor] = None,
    ) -> Tuple[Tensor, StreamLayout]:
        """
        Input embeddings and the stream layout.

        Token models take ``tokens`` (1-D for sequential models, ``(T, F)`` for
        framed models). Slot models take ``num_steps`` and emit
        ``slots_per_step`` learned slots per step. Sequential token models may
        also take ``prefix``, a ``(P, D)`` block of vectors placed before the
        token embeddings (positions count from the first prefix row).

        Raises
        ------
        VocabularyRangeError
            If a token id is outside the vocabulary
        ShapeMismatchError
            If the input does not fit the model's layout limits
        """
        spec = self.spec
        if spec.input_kind == "slots":
            if num_steps is None or num_steps < 1 or num_steps > spec.max_frames:
                raise ShapeMismatchError("embed", (num_steps,), (spec.max_frames,), detail=f"{spec.name} step count")
            slots = spec.slots_per_step
            layout = StreamLayout(num_steps * slots, frame_size=slots, num_frames=num_steps)
            base = ops.take(self.p("embed.slots"), np.tile(np.arange(slots), num_steps))
            return self._add_frame_positions(base, layout), layout

        tokens = np.asarray(tokens, dtype=np.int64)
        if self.framed:
            if tokens.ndim != 2 or tokens.shape[1] > spec.tokens_per_frame or tokens.shape[0] > spec.max_frames:
                raise ShapeMismatchError(
                    "embed", tokens.shape, (spec.max_frames, spec.tokens_per_frame), detail=f"{spec.name} frames"
                )
            layout = StreamLayout(tokens.size, frame_size=tokens.shape[1], num_frames=tokens.shape[0])
            base = ops.embedding_lookup(self.p("embed.tokens"), tokens.reshape(-1))
            return self._add_frame_positions(base, layout), layout

        length = tokens.size + (prefix.shape[0] if prefix is not None else 0)
        if tokens.ndim != 1 or length < 1 or length > spec.max_positions:
            raise ShapeMismatchError("embed", tokens.shape, (spec.max_positions,), detail=f"{spec.name} sequence")
        base = ops.embedding_lookup(self.p("embed.tokens"), tokens)
        if prefix is not None:
            if prefix.ndim != 2 or prefix.shape[1] != self.width:
                raise ShapeMismatchError("embed", prefix.shape, (self.width,), detail="prefix width")
            base = ops.concat([prefix, base], axis=0)
        return ops.add(base, ops.take(self.p("embed.position"), np.arange(length))), StreamLayout(length)

    def _add_frame_positions(self, base: Tensor, layout: StreamLayout) -> Tensor:
        slot_ids = np.tile(np.arange(layout.frame_size), layout.num_frames)
        time_ids = np.repeat(np.arange(layout.num_frames), layout.frame_size)
        out = ops.add(base, ops.take(self.p("embed.frame_slot"), slot_ids)) if "embed.frame_slot" in self._parameters else base
        return ops.add(out, ops.take(self.p("embed.time"), time_ids))

    # --- layers ---
    def layer_mask(self, layer: int, layout: StreamLayout) -> np.ndarray:
        """Dense mask of the 1-based ``layer`` over the whole stream."""
        mode = self.spec.mask_mode
        if mode == "time_space":
            return build_factorized_mask(layout.frame_size, layout.num_frames, layer - 1)
        if mode == "full":
            return np.ones((layout.length, layout.length), dtype=bool)
        return causal_mask(layout.length)

    def apply_layer(self, layer: int, h: Tensor, layout: StreamLayout, dense: bool = False) -> Tensor:
        """
        Run the 1-based ``layer`` on the ``(S, D)`` stream ``h``.

        Time-space layers are evaluated as per-frame or per-slot batches unless
        ``dense`` asks for the equivalent full-stream masked evaluation.
        """
        if h.shape != (layout.length, self.width):
            raise ShapeMismatchError("apply_layer", h.shape, (layout.length, self.width), detail=self.name)
        block = self.blocks[layer - 1]
        frames, size, width = layout.num_frames, layout.frame_size, self.width
        if self.spec.mask_mode == "time_space" and not dense:
            grid = ops.reshape(h, (frames, size, width))
            if (layer - 1) % 2 == 0:
                out = block(grid, np.ones((size, size), dtype=bool))
            else:
                by_slot = ops.transpose(grid, (1, 0, 2))
                out = ops.transpose(block(by_slot, causal_mask(frames)), (1, 0, 2))
            return ops.reshape(out, (layout.length, width))
        out = block(ops.reshape(h, (1, layout.length, width)), self.layer_mask(layer, layout))
        return ops.reshape(out, (layout.length, width))

    def run_layers(self, h: Tensor, start: int, stop: int, layout: StreamLayout, dense: bool = False) -> Tensor:
        """Apply layers ``start + 1 .. stop`` (1-based, inclusive)."""
        for layer in range(start + 1, stop + 1):
            h = self.apply_layer(layer, h, layout, dense=dense)
        return h

    # --- readout ---
    def readout(self, h: Tensor, layout: StreamLayout) -> Tensor:
        """
        Output logits.

        Tied heads give ``(S, vocab)``; the action head gives ``(T, num_actions)``
        from the last slot of every step.
        """
        normed = ops.layernorm(h, self.p("final_ln.gain"), self.p("final_ln.bias"))
        if self.spec.head == "tied":
            table = self.p("embed.tokens")
            return ops.matmul(normed, ops.transpose(table, (1, 0)))
        last_slots = np.arange(layout.num_frames) * layout.frame_size + (layout.frame_size - 1)
        step_states = ops.take(normed, last_slots)
        hidden = ops.gelu(ops.linear(step_states, self.p("head.hidden.weight"), self.p("head.hidden.bias")))
        return ops.linear(hidden, self.p("head.out.weight"), self.p("head.out.bias"))

    # --- full forward ---
    def forward_with_taps(
        self,
        tokens: Optional[np.ndarray] = None,
        num_steps: Optional[int] = None,
        prefix: Optional[Tensor] = None,
        inject: Optional[Mapping[int, Tensor]] = None,
        dense: bool = False,
    ) -> Tuple[Tensor, Dict[int, Tensor]]:
        """
        Plain forward that records every intermediate stream.

        Parameters
        ----------
        tokens, num_steps, prefix
            Model input, see :meth:`embed`
        inject : mapping, optional
            Layer -> replacement stream fed to the next layer instead of the
            layer's own output
        dense : bool, default=False
            Use dense masks for time-space layers

        Returns
        -------
        tuple
            ``(logits, taps)`` where ``taps[0]`` is the embedding stream and
            ``taps[l]`` the output of layer ``l`` before any injection
        """
        inject = inject or {}
        h, layout = self.embed(tokens=tokens, num_steps=num_steps, prefix=prefix)
        taps: Dict[int, Tensor] = {0: h}
        if 0 in inject:
            h = inject[0]
        for layer in range(1, self.num_layers + 1):
            h = self.apply_layer(layer, h, layout, dense=dense)
            taps[layer] = h
            if layer in inject:
                if inject[layer].shape != h.shape:
                    raise ShapeMismatchError("inject", h.shape, inject[layer].shape, detail=f"layer {layer}")
                h = inject[layer]
        return self.readout(h, layout), taps

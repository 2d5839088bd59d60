# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Hand-written gated cross-attention language model.

A straight-line numpy implementation of a causal language model with gated
cross-attention adapters after selected layers. It shares no code with the GATS
layer or the component transformer; weights are copied in by name using the
correspondence documented in docs/WEIGHT_MAPPING.md.
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence

import numpy as np
from scipy.special import erf

EPS = 1e-5


@dataclass
class AdapterWeights:
    """One gated cross-attention adapter."""

    kv_in_weight: np.ndarray  # vision feature -> d
    kv_in_bias: np.ndarray
    vision_slots: np.ndarray  # (V, d), oldest feature first
    text_slot: np.ndarray  # (d,)
    vision_type: np.ndarray
    text_type: np.ndarray
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray
    ffw_in_weight: np.ndarray
    ffw_in_bias: np.ndarray
    ffw_out_weight: np.ndarray
    ffw_out_bias: np.ndarray
    gate_ln_gain: np.ndarray
    gate_ln_bias: np.ndarray
    gate_weight: np.ndarray  # (d,)
    gate_bias: float
    after_layer: int


@dataclass
class LanguageWeights:
    token_table: np.ndarray
    position_table: np.ndarray
    blocks: List[Dict[str, np.ndarray]]
    final_gain: np.ndarray
    final_bias: np.ndarray
    heads: int


def _layer_norm(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + EPS) * gain + bias


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _attention(q_rows, kv_rows, wq, bq, wk, bk, wv, bv, wo, bo, heads, allowed):
    """Multi-head attention of ``q_rows`` over ``kv_rows``; ``allowed[i, j]`` gates query i -> key j."""
    d = q_rows.shape[-1]
    hd = d // heads
    q = q_rows @ wq + bq
    k = kv_rows @ wk + bk
    v = kv_rows @ wv + bv
    out = np.zeros((q_rows.shape[0], d))
    for h in range(heads):
        cols = slice(h * hd, (h + 1) * hd)
        scores = q[:, cols] @ k[:, cols].T / math.sqrt(hd)
        scores = np.where(allowed, scores, -np.inf)
        scores = scores - scores.max(axis=1, keepdims=True)
        weights = np.exp(scores)
        weights = weights / weights.sum(axis=1, keepdims=True)
        out[:, cols] = weights @ v[:, cols]
    return out @ wo + bo


def _language_block(x, block, heads):
    n = x.shape[0]
    h = _layer_norm(x, block["ln1.gain"], block["ln1.bias"])
    causal = np.tril(np.ones((n, n), dtype=bool))
    x = x + _attention(
        h, h,
        block["attn.q.weight"], block["attn.q.bias"],
        block["attn.k.weight"], block["attn.k.bias"],
        block["attn.v.weight"], block["attn.v.bias"],
        block["attn.o.weight"], block["attn.o.bias"],
        heads, causal,
    )
    hidden = _gelu(_layer_norm(x, block["ln2.gain"], block["ln2.bias"]) @ block["ffw.in.weight"] + block["ffw.in.bias"])
    return x + hidden @ block["ffw.out.weight"] + block["ffw.out.bias"]


def _adapter(x, features, a: AdapterWeights, heads):
    """Update every text row with gated cross-attention over the features and itself."""
    n = x.shape[0]
    keys_vision = features @ a.kv_in_weight + a.kv_in_bias + a.vision_slots + a.vision_type if len(features) else None
    out = np.empty_like(x)
    for t in range(n):
        query = x[t] + a.text_slot + a.text_type
        rows = query[None, :] if keys_vision is None else np.vstack([keys_vision, query[None, :]])
        normed = _layer_norm(rows, a.ln1_gain, a.ln1_bias)
        attended = _attention(
            normed[-1:], normed,
            a.wq, a.bq, a.wk, a.bk, a.wv, a.bv, a.wo, a.bo,
            heads, np.ones((1, rows.shape[0]), dtype=bool),
        )[0]
        u = query + attended
        z = u + _gelu(_layer_norm(u, a.ln2_gain, a.ln2_bias) @ a.ffw_in_weight + a.ffw_in_bias) @ a.ffw_out_weight + a.ffw_out_bias
        gate = 1.0 / (1.0 + np.exp(-(_layer_norm(z, a.gate_ln_gain, a.gate_ln_bias) @ a.gate_weight + a.gate_bias)))
        out[t] = x[t] + gate * z
    return out


def reference_cross_attention(
    language: LanguageWeights,
    vision_features: np.ndarray,
    adapters: Sequence[AdapterWeights],
    text_tokens: np.ndarray,
    adapter_heads: int,
) -> np.ndarray:
    """Logits ``(n, vocab)`` of the language model with adapters inserted after their layers."""
    tokens = np.asarray(text_tokens, dtype=np.int64)
    features = np.asarray(vision_features, dtype=np.float64)
    x = language.token_table[tokens] + language.position_table[: tokens.size]
    by_layer: Dict[int, List[AdapterWeights]] = {}
    for a in adapters:
        by_layer.setdefault(a.after_layer, []).append(a)
    for layer, block in enumerate(language.blocks, start=1):
        x = _language_block(x, block, language.heads)
        for a in by_layer.get(layer, []):
            x = _adapter(x, features, a, adapter_heads)
    x = _layer_norm(x, language.final_gain, language.final_bias)
    return x @ language.token_table.T


# --------------------------------------------------------------------------- #
# Weight correspondence
# --------------------------------------------------------------------------- #
def language_weights(state: Mapping[str, np.ndarray], num_layers: int, heads: int, prefix: str = "") -> LanguageWeights:
    def block(i):
        head = f"{prefix}block{i}."
        return {name[len(head):]: value for name, value in state.items() if name.startswith(head)}

    return LanguageWeights(
        token_table=state[f"{prefix}embed.tokens"],
        position_table=state[f"{prefix}embed.position"],
        blocks=[block(i) for i in range(1, num_layers + 1)],
        final_gain=state[f"{prefix}final_ln.gain"],
        final_bias=state[f"{prefix}final_ln.bias"],
        heads=heads,
    )


def adapter_weights(
    state: Mapping[str, np.ndarray],
    insertion: Sequence[int],
    num_features: int,
    vision: str = "vision",
    text: str = "language",
    prefix: str = "gats.",
) -> List[AdapterWeights]:
    """Adapters from GATS parameters ``{prefix}layer{k}.*``; ``insertion[k-1]`` is the language layer."""
    adapters = []
    for k, after in enumerate(insertion, start=1):
        g = lambda name: state[f"{prefix}layer{k}.{name}"]  # noqa: E731
        adapters.append(
            AdapterWeights(
                kv_in_weight=g(f"p.{vision}.weight"),
                kv_in_bias=g(f"p.{vision}.bias"),
                vision_slots=g(f"pos.{vision}")[:num_features],
                text_slot=g(f"pos.{text}")[0],
                vision_type=g(f"type.{vision}"),
                text_type=g(f"type.{text}"),
                ln1_gain=g("ln1.gain"),
                ln1_bias=g("ln1.bias"),
                wq=g("attn.q.weight"),
                bq=g("attn.q.bias"),
                wk=g("attn.k.weight"),
                bk=g("attn.k.bias"),
                wv=g("attn.v.weight"),
                bv=g("attn.v.bias"),
                wo=g("attn.o.weight"),
                bo=g("attn.o.bias"),
                ln2_gain=g("ln2.gain"),
                ln2_bias=g("ln2.bias"),
                ffw_in_weight=g("ffw.in.weight"),
                ffw_in_bias=g("ffw.in.bias"),
                ffw_out_weight=g("ffw.out.weight"),
                ffw_out_bias=g("ffw.out.bias"),
                gate_ln_gain=g(f"g.{text}.ln_gain"),
                gate_ln_bias=g(f"g.{text}.ln_bias"),
                gate_weight=g(f"g.{text}.weight").reshape(-1),
                gate_bias=float(g(f"g.{text}.bias").reshape(-1)[0]),
                after_layer=int(after),
            )
        )
    return adapters

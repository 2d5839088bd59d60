# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Differentiable operations on :class:`~gats_engine.core.tensor.Tensor`.

Rules shared by every op:

- inputs and outputs are float64;
- no implicit broadcasting; the only exception is ``add_bias`` (a vector added
  along the last axis) and ``mul_rows`` (one scalar per row). Anything else needs
  an explicit ``reshape``;
- every output is checked for NaN/Inf;
- reductions run over the last axis of contiguous arrays, so results are
  bitwise reproducible for identical inputs.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf, expit

from gats_engine.core.exceptions import ShapeMismatchError, VocabularyRangeError
from gats_engine.core.tensor import DEFAULT_DTYPE, BackwardFn, Tensor, check_finite, current_tape

LAYERNORM_EPS = 1e-5
IGNORE_INDEX = -100

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _emit(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    check_finite(op, data)
    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(np.ascontiguousarray(data, dtype=DEFAULT_DTYPE), requires_grad)
    tape = current_tape()
    if tape is not None and requires_grad:
        tape.record(op, inputs, out, backward_fn)
    return out


def constant(values, name: Optional[str] = None) -> Tensor:
    """Build a tensor that never requires a gradient."""
    return Tensor(values, requires_grad=False, name=name)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(op, a.shape, b.shape)


# --------------------------------------------------------------------------- #
# Elementwise
# --------------------------------------------------------------------------- #
def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    a_data, b_data = a.data, b.data
    return _emit("mul", a_data * b_data, (a, b), lambda g: (g * b_data, g * a_data))


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _emit("scale", x.data * factor, (x,), lambda g: (g * factor,))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a vector along the last axis of ``x``."""
    if bias.ndim != 1 or x.ndim == 0 or x.shape[-1] != bias.shape[0]:
        raise ShapeMismatchError("add_bias", x.shape, bias.shape, detail="bias must match the last axis")
    width = bias.shape[0]

    def backward_fn(g):
        return g, g.reshape(-1, width).sum(axis=0)

    return _emit("add_bias", x.data + bias.data, (x, bias), backward_fn)


def mul_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply every last-axis row of ``x`` by the matching scalar in ``s``."""
    if s.shape != x.shape[:-1]:
        raise ShapeMismatchError("mul_rows", x.shape, s.shape, detail="one scalar per row expected")
    x_data, s_data = x.data, s.data

    def backward_fn(g):
        return g * s_data[..., None], np.sum(g * x_data, axis=-1)

    return _emit("mul_rows", x_data * s_data[..., None], (x, s), backward_fn)


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)
    return _emit("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)``."""
    x_data = x.data
    cdf = 0.5 * (1.0 + erf(x_data * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x_data * x_data)
    return _emit("gelu", x_data * cdf, (x,), lambda g: (g * (cdf + x_data * pdf),))


# --------------------------------------------------------------------------- #
# Shape manipulation
# --------------------------------------------------------------------------- #
def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise ShapeMismatchError("reshape", x.shape, shape, detail="element counts differ")
    original = x.shape
    return _emit("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(original),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeMismatchError("transpose", x.shape, axes, detail="axes must permute all dimensions")
    inverse = tuple(np.argsort(axes))
    return _emit("transpose", np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not xs:
        raise ShapeMismatchError("concat", (), detail="nothing to concatenate")
    ndim = xs[0].ndim
    axis = axis % ndim
    for t in xs[1:]:
        other = t.shape[:axis] + t.shape[axis + 1:]
        first = xs[0].shape[:axis] + xs[0].shape[axis + 1:]
        if t.ndim != ndim or other != first:
            raise ShapeMismatchError("concat", xs[0].shape, t.shape)
    sizes = [t.shape[axis] for t in xs]
    cuts = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _emit("concat", np.concatenate([t.data for t in xs], axis=axis), tuple(xs), backward_fn)


def stack(xs: Sequence[Tensor]) -> Tensor:
    """Stack equally shaped tensors along a new leading axis."""
    return concat([reshape(t, (1,) + t.shape) for t in xs], axis=0)


def take(x: Tensor, indices) -> Tensor:
    """Gather rows of ``x`` along axis 0; output shape is ``indices.shape + x.shape[1:]``."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ShapeMismatchError("take", x.shape, idx.shape, detail="row index out of range")
    source_shape = x.shape

    def backward_fn(g):
        grad = np.zeros(source_shape, dtype=DEFAULT_DTYPE)
        np.add.at(grad, idx.reshape(-1), g.reshape((-1,) + source_shape[1:]))
        return (grad,)

    return _emit("take", x.data[idx], (x,), backward_fn)


# --------------------------------------------------------------------------- #
# Reductions
# --------------------------------------------------------------------------- #
def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    source_shape = x.shape
    total = np.sum(x.data.reshape(-1))
    return _emit("sum", np.asarray(total), (x,), lambda g: (np.full(source_shape, float(g)),))


def mean(x: Tensor) -> Tensor:
    return scale(sum(x), 1.0 / max(x.size, 1))


# --------------------------------------------------------------------------- #
# Linear algebra
# --------------------------------------------------------------------------- #
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product.

    Both operands are 2-D, or both have identical leading (batch) dimensions.

    Raises
    ------
    ShapeMismatchError
        If inner dimensions disagree or batch dimensions differ
    """
    if a.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    a_data, b_data = a.data, b.data

    def backward_fn(g):
        return g @ np.swapaxes(b_data, -1, -2), np.swapaxes(a_data, -1, -2) @ g

    return _emit("matmul", a_data @ b_data, (a, b), backward_fn)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map over the last axis: ``x @ weight + bias``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeMismatchError("linear", x.shape, weight.shape)
    lead = x.shape[:-1]
    flat = x if x.ndim == 2 else reshape(x, (int(np.prod(lead, dtype=np.int64)), x.shape[-1]))
    out = matmul(flat, weight)
    if bias is not None:
        out = add_bias(out, bias)
    if x.ndim != 2:
        out = reshape(out, lead + (weight.shape[1],))
    return out


# --------------------------------------------------------------------------- #
# Normalisation and probabilities
# --------------------------------------------------------------------------- #
def softmax(x: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Numerically stable softmax.

    Parameters
    ----------
    x : Tensor
        Logits
    axis : int, default=-1
        Axis that sums to one
    mask : np.ndarray of bool, optional
        Same shape as ``x``; False entries get probability exactly 0. Every
        slice along ``axis`` must keep at least one True entry.
    """
    data = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeMismatchError("softmax", x.shape, mask.shape, detail="mask must match logits")
        data = np.where(mask, data, -np.inf)
    shifted = data - np.max(data, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    y = exp / np.sum(exp, axis=axis, keepdims=True)

    def backward_fn(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _emit("softmax", y, (x,), backward_fn)


def log_softmax(x: Tensor) -> Tensor:
    """Log-probabilities over the last axis."""
    shifted = x.data - np.max(x.data, axis=-1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    y = shifted - log_z
    probs = np.exp(y)

    def backward_fn(g):
        return (g - probs * np.sum(g, axis=-1, keepdims=True),)

    return _emit("log_softmax", y, (x,), backward_fn)


def layernorm(
    x: Tensor,
    gain: Optional[Tensor] = None,
    bias: Optional[Tensor] = None,
    eps: float = LAYERNORM_EPS,
) -> Tensor:
    """Layer normalisation over the last axis; ``gain``/``bias`` are optional."""
    width = x.shape[-1]
    for name, p in (("gain", gain), ("bias", bias)):
        if p is not None and p.shape != (width,):
            raise ShapeMismatchError("layernorm", x.shape, p.shape, detail=f"{name} must match last axis")
    centered = x.data - np.mean(x.data, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(np.mean(centered * centered, axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    gain_data = gain.data if gain is not None else None
    out = xhat * gain_data if gain is not None else xhat
    if bias is not None:
        out = out + bias.data

    inputs = [x]
    if gain is not None:
        inputs.append(gain)
    if bias is not None:
        inputs.append(bias)

    def backward_fn(g):
        dxhat = g * gain_data if gain_data is not None else g
        dx = inv_std * (
            dxhat
            - np.mean(dxhat, axis=-1, keepdims=True)
            - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)
        )
        grads = [dx]
        if gain is not None:
            grads.append(np.sum((g * xhat).reshape(-1, width), axis=0))
        if bias is not None:
            grads.append(np.sum(g.reshape(-1, width), axis=0))
        return tuple(grads)

    return _emit("layernorm", out, tuple(inputs), backward_fn)


# --------------------------------------------------------------------------- #
# Embeddings and losses
# --------------------------------------------------------------------------- #
def validate_ids(op: str, ids: np.ndarray, vocab_size: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size:
        bad = ids[(ids < 0) | (ids >= vocab_size)]
        if bad.size:
            raise VocabularyRangeError(op, int(bad[0]), vocab_size)
    return ids


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Rows of ``table`` for every id; raises on out-of-vocabulary ids."""
    ids = validate_ids("embedding_lookup", ids, table.shape[0])
    return take(table, ids)


def cross_entropy(logits: Tensor, targets, ignore_index: int = IGNORE_INDEX) -> Tensor:
    """
    Mean negative log-likelihood over non-ignored targets.

    ``logits`` has shape ``(n, V)``; ``targets`` has shape ``(n,)``. Entries equal
    to ``ignore_index`` are skipped. With no remaining targets the loss is 0 and
    all gradients are 0.
    """
    if logits.ndim != 2:
        raise ShapeMismatchError("cross_entropy", logits.shape, detail="logits must be (n, V)")
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape[0] != logits.shape[0]:
        raise ShapeMismatchError("cross_entropy", logits.shape, targets.shape)
    keep = targets != ignore_index
    validate_ids("cross_entropy", targets[keep], logits.shape[1])
    count = int(np.count_nonzero(keep))
    if count == 0:
        return scale(sum(logits), 0.0)

    log_probs = log_softmax(logits)
    one_hot = np.zeros(logits.shape, dtype=DEFAULT_DTYPE)
    rows = np.nonzero(keep)[0]
    one_hot[rows, targets[keep]] = -1.0 / count
    picked = mul(log_probs, constant(one_hot))
    return sum(picked)

# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Self-describing binary checkpoints.

    magic      8 bytes  b"GATSCKPT"
    version    uint32
    header_len uint64
    header     UTF-8 JSON: kind, step, topology, config, rng_state, tensor table
    payload    raw little-endian tensor bytes, in table order

Each tensor table entry holds ``name``, ``shape``, ``dtype`` (``f64`` or
``f32``), ``offset`` (from the start of the payload) and ``nbytes``. The JSON is
written with sorted keys and fixed separators, so saving the same state twice
gives byte-identical files. Writes go to a temporary file that is then renamed.
"""

import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from gats_engine.core.exceptions import CheckpointError, ShapeMismatchError, TopologyMismatchError
from gats_engine.core.module import Module

logger = logging.getLogger(__name__)

MAGIC = b"GATSCKPT"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<8sIQ")
_DTYPES = {"f64": np.dtype("<f8"), "f32": np.dtype("<f4")}


@dataclass
class Checkpoint:
    """In-memory form of a checkpoint file."""

    tensors: Dict[str, np.ndarray]
    topology: List[Tuple[str, Tuple[int, ...]]]
    kind: str = "bundle"
    step: int = 0
    config: Dict[str, Any] = field(default_factory=dict)
    rng_state: Optional[Dict[str, Any]] = None


def _encode(checkpoint: Checkpoint, dtype: str) -> bytes:
    if dtype not in _DTYPES:
        raise CheckpointError(f"unsupported dtype '{dtype}'; use one of {sorted(_DTYPES)}")
    table = []
    blobs = []
    offset = 0
    for name, _ in checkpoint.topology:
        array = np.ascontiguousarray(checkpoint.tensors[name], dtype=_DTYPES[dtype])
        blob = array.tobytes()
        table.append({"name": name, "shape": list(array.shape), "dtype": dtype, "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "kind": checkpoint.kind,
        "step": int(checkpoint.step),
        "topology": [[name, list(shape)] for name, shape in checkpoint.topology],
        "config": checkpoint.config,
        "rng_state": checkpoint.rng_state,
        "tensors": table,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header_bytes)) + header_bytes + b"".join(blobs)


def write_checkpoint(path: Path, checkpoint: Checkpoint, dtype: str = "f64") -> Path:
    """Atomically write ``checkpoint`` to ``path``."""
    path = Path(path)
    data = _encode(checkpoint, dtype)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        with os.fdopen(fd, "wb") as stream:
            stream.write(data)
        os.replace(tmp, path)
    except OSError as e:
        logger.error(f"Failed to write checkpoint {path}: {e}")
        raise CheckpointError(f"cannot write {path}: {e}") from e
    logger.info(f"Checkpoint written: {path} ({len(checkpoint.topology)} tensors, step {checkpoint.step})")
    return path


def save_checkpoint(
    path: Path,
    module: Module,
    kind: str = "bundle",
    step: int = 0,
    config: Optional[Mapping[str, Any]] = None,
    rng: Optional[np.random.Generator] = None,
    dtype: str = "f64",
) -> Path:
    """Snapshot every parameter of ``module`` plus run metadata."""
    checkpoint = Checkpoint(
        tensors=module.state_dict(),
        topology=module.topology(),
        kind=kind,
        step=step,
        config=dict(config or {}),
        rng_state=rng.bit_generator.state if rng is not None else None,
    )
    return write_checkpoint(path, checkpoint, dtype=dtype)


def load_checkpoint(path: Path) -> Checkpoint:
    """
    Read a checkpoint file.

    Raises
    ------
    CheckpointError
        If the file is missing, truncated, not a checkpoint, or written by a
        newer format version
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read {path}: {e}") from e
    if len(raw) < _PREAMBLE.size:
        raise CheckpointError(f"{path} is too short to be a checkpoint")
    magic, version, header_len = _PREAMBLE.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path} is not a GATS checkpoint")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path} uses checkpoint format version {version}; this reader supports version {FORMAT_VERSION}"
        )
    start = _PREAMBLE.size
    try:
        header = json.loads(raw[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path} has a corrupt header: {e}") from e

    payload = raw[start + header_len :]
    tensors = {}
    for entry in header["tensors"]:
        end = entry["offset"] + entry["nbytes"]
        if end > len(payload):
            raise CheckpointError(f"{path} is truncated inside tensor '{entry['name']}'")
        values = np.frombuffer(payload[entry["offset"] : end], dtype=_DTYPES[entry["dtype"]])
        tensors[entry["name"]] = values.reshape(entry["shape"]).astype(np.float64)
    return Checkpoint(
        tensors=tensors,
        topology=[(name, tuple(shape)) for name, shape in header["topology"]],
        kind=header["kind"],
        step=header["step"],
        config=header["config"],
        rng_state=header["rng_state"],
    )


def restore_module(module: Module, checkpoint: Checkpoint, prefix: str = "") -> None:
    """
    Load tensors into ``module``.

    ``prefix`` selects a sub-tree of the checkpoint (e.g. ``"language."`` for one model of a component set).

    Raises
    ------
    TopologyMismatchError
        With the expected-vs-found name diff when the topologies differ
    ShapeMismatchError
        If a tensor has the wrong shape
    """
    found = {name[len(prefix) :]: shape for name, shape in checkpoint.topology if name.startswith(prefix)}
    expected = dict(module.topology())
    missing = [n for n in expected if n not in found]
    unexpected = [n for n in found if n not in expected]
    if missing or unexpected:
        logger.error(f"Checkpoint topology mismatch: {len(missing)} missing, {len(unexpected)} unexpected")
        raise TopologyMismatchError(missing, unexpected)
    for name, shape in expected.items():
        if tuple(found[name]) != tuple(shape):
            raise ShapeMismatchError("restore_module", shape, found[name], detail=name)
    module.load_state_dict({name: checkpoint.tensors[prefix + name] for name in expected})


def restore_rng(checkpoint: Checkpoint) -> np.random.Generator:
    """Generator continuing from the saved RNG state."""
    if checkpoint.rng_state is None:
        raise CheckpointError("checkpoint carries no RNG state")
    rng = np.random.default_rng()
    rng.bit_generator.state = checkpoint.rng_state
    return rng

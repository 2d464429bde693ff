"""Versioned binary checkpoints.

Layout::

    b"SWSG" | u32 format version | u64 metadata length | metadata JSON | payload

The metadata is sorted-key UTF-8 JSON holding the run configuration, training
step, seeds and a manifest of ``{name, dtype, shape, offset, nbytes}`` entries
that locate each little-endian array inside the payload.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grad import AdamState

__all__ = ["MAGIC", "FORMAT_VERSION", "Checkpoint", "CheckpointError", "save_checkpoint", "load_checkpoint", "match_weights"]

MAGIC = b"SWSG"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQ")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    """Model configuration, weights and optimizer state of one training run."""

    config: dict
    weights: dict[str, np.ndarray]
    optimizer: AdamState = field(default_factory=AdamState)
    step: int = 0
    seeds: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def _arrays(ckpt: Checkpoint) -> dict[str, np.ndarray]:
    out = {f"weights/{k}": v for k, v in ckpt.weights.items()}
    out.update({f"adam.m/{k}": v for k, v in ckpt.optimizer.m.items()})
    out.update({f"adam.v/{k}": v for k, v in ckpt.optimizer.v.items()})
    return out


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Write ``ckpt`` atomically (temporary file, then rename)."""
    manifest, blobs, offset = [], [], 0
    for name in sorted(_arrays(ckpt)):
        arr = np.asarray(_arrays(ckpt)[name])
        if arr.dtype.kind != "f":
            raise CheckpointError(f"{name}: only floating-point arrays are stored")
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = np.ascontiguousarray(le).tobytes()
        manifest.append(
            {"name": name, "dtype": le.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)}
        )
        blobs.append(blob)
        offset += len(blob)
    meta = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config,
        "step": int(ckpt.step),
        "optimizer_step": int(ckpt.optimizer.step),
        "seeds": ckpt.seeds,
        "extra": ckpt.extra,
        "tensors": manifest,
        "payload_bytes": offset,
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint; any inconsistency raises :class:`CheckpointError`
    before a partial object is returned."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CheckpointError("truncated header")
    magic, version, meta_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, not a checkpoint")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version} (expected {FORMAT_VERSION})")
    start = _HEADER.size + meta_len
    if start > len(data):
        raise CheckpointError("truncated metadata")
    try:
        meta = json.loads(data[_HEADER.size : start])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt metadata: {exc}") from exc
    payload = memoryview(data)[start:]
    if len(payload) != meta.get("payload_bytes"):
        raise CheckpointError(f"payload is {len(payload)} bytes, manifest declares {meta.get('payload_bytes')}")
    arrays = {}
    for entry in meta["tensors"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        lo, n = entry["offset"], entry["nbytes"]
        if lo + n > len(payload) or n != dtype.itemsize * int(np.prod(shape)):
            raise CheckpointError(f"manifest entry {entry['name']!r} does not fit the payload")
        arr = np.frombuffer(payload[lo : lo + n], dtype=dtype).reshape(shape)
        arrays[entry["name"]] = arr.astype(dtype.newbyteorder("="))
    weights, m, v = {}, {}, {}
    for name, arr in arrays.items():
        group, key = name.split("/", 1)
        {"weights": weights, "adam.m": m, "adam.v": v}[group][key] = arr
    return Checkpoint(
        config=meta["config"],
        weights=weights,
        optimizer=AdamState(step=meta["optimizer_step"], m=m, v=v),
        step=meta["step"],
        seeds=meta["seeds"],
        extra=meta.get("extra", {}),
    )


def match_weights(weights: dict[str, np.ndarray], expected: dict[str, tuple]) -> None:
    """Check stored weights against the shapes a model expects.

    Raises
    ------
    CheckpointError
        Naming the first mismatching or missing tensor, with output heads
        reported as such.
    """

    def label(name):
        parts = name.split(".")
        return f"head {parts[1]!r}" if parts[0] == "head" else f"tensor {name!r}"

    for name, shape in expected.items():
        if name not in weights:
            raise CheckpointError(f"shape mismatch: {label(name)} ({name}) missing from checkpoint, expected {tuple(shape)}")
        if tuple(weights[name].shape) != tuple(shape):
            raise CheckpointError(
                f"shape mismatch: {label(name)} ({name}) is {tuple(weights[name].shape)}, expected {tuple(shape)}"
            )
    extra = sorted(set(weights) - set(expected))
    if extra:
        raise CheckpointError(f"shape mismatch: {label(extra[0])} ({extra[0]}) not used by this model")

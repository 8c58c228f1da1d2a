"""Named-tensor container: the bit-exact serialization format for weights.

Layout:
  bytes 0..8    magic "NTC1" + 4 zero bytes
  bytes 8..16   little-endian u64 = JSON header byte length H
  bytes 16..16+H  UTF-8 JSON: name -> {"dtype": "f32", "shape": [...], "offset": int}
  payload       row-major little-endian float32, offsets relative to the
                payload start and 8-byte aligned

Serialization is deterministic (names sorted, compact JSON), so saving the
same tensors twice produces byte-identical files.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .core import DataError

MAGIC = b"NTC1\x00\x00\x00\x00"
_ALIGN = 8


def save_tensors(path, tensors: dict) -> None:
    """Write a name -> array mapping; values are converted to float32."""
    entries = {}
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype="<f4"))
        pad = (-offset) % _ALIGN
        if pad:
            chunks.append(b"\x00" * pad)
            offset += pad
        entries[name] = {"dtype": "f32", "shape": list(arr.shape), "offset": offset}
        data = arr.tobytes()
        chunks.append(data)
        offset += len(data)
    header = json.dumps(entries, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)


def load_tensors(path) -> dict:
    """Read a container back into a name -> float32 ndarray mapping."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise DataError(f"{path}: bad magic, not a named-tensor container")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    if 16 + header_len > len(blob):
        raise DataError(f"{path}: truncated header")
    try:
        entries = json.loads(blob[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: unreadable header: {exc}") from exc
    payload = blob[16 + header_len :]
    tensors = {}
    for name, entry in entries.items():
        if entry.get("dtype") != "f32":
            raise DataError(f"{path}: tensor {name!r} has unsupported dtype {entry.get('dtype')!r}")
        shape = tuple(int(s) for s in entry["shape"])
        offset = int(entry["offset"])
        if offset % _ALIGN:
            raise DataError(f"{path}: tensor {name!r} offset {offset} not 8-byte aligned")
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4
        if offset < 0 or offset + nbytes > len(payload):
            raise DataError(f"{path}: truncated payload for tensor {name!r}")
        arr = np.frombuffer(payload, dtype="<f4", count=nbytes // 4, offset=offset)
        tensors[name] = arr.reshape(shape).copy()
    return tensors


def require_names(tensors: dict, names, path="container") -> None:
    """Reject a tensor mapping that lacks any of the required names."""
    missing = [n for n in names if n not in tensors]
    if missing:
        raise DataError(f"{path}: missing required tensors: {missing}")


def require_shape(tensors: dict, name: str, shape, path="container") -> np.ndarray:
    """Fetch one tensor, rejecting shape mismatches with a descriptive error."""
    arr = tensors[name]
    if tuple(arr.shape) != tuple(shape):
        raise DataError(
            f"{path}: tensor {name!r} has shape {tuple(arr.shape)}, expected {tuple(shape)}"
        )
    return arr

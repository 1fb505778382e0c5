"""Binary parameter checkpoints.

Layout (all integers little-endian u32 unless noted):

    magic   b"RENW"
    version u32
    count   u32
    per tensor:
        name_len u32, name UTF-8 bytes
        rank     u32, extents u32 each
        data     raw 32-bit little-endian floats, C order

Round trips are bit-exact for float32 data. Float64 tensors are stored as
float32 (the format's width); callers who need float64 fidelity should not
round-trip through checkpoints.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"RENW"
VERSION = 1

__all__ = ["save_tensors", "load_tensors", "CheckpointError", "MAGIC", "VERSION"]


class CheckpointError(ValueError):
    """Malformed or truncated checkpoint data."""


def _tensor_data(value):
    data = getattr(value, "data", value)
    return np.ascontiguousarray(np.asarray(data), dtype="<f4")


def dump_tensors(named):
    """Serialize name -> array/Tensor pairs to bytes (insertion order kept)."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(named))]
    for name, value in named.items():
        raw = name.encode("utf-8")
        arr = _tensor_data(value)
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def parse_tensors(blob):
    """Inverse of dump_tensors; returns dict name -> float32 ndarray."""
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointError("bad magic: not a parameter checkpoint")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    out = {}
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            if len(blob) < pos + name_len:
                raise CheckpointError("truncated checkpoint (name)")
            name = blob[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
        except struct.error as exc:
            raise CheckpointError("truncated checkpoint (header)") from exc
        n_bytes = 4 * int(np.prod(shape, dtype=np.int64))
        if len(blob) < pos + n_bytes:
            raise CheckpointError(f"truncated checkpoint (data for {name!r})")
        arr = np.frombuffer(blob[pos : pos + n_bytes], dtype="<f4").reshape(shape)
        pos += n_bytes
        out[name] = arr.copy()
    return out


def save_tensors(path, named):
    Path(path).write_bytes(dump_tensors(named))


def load_tensors(path):
    return parse_tensors(Path(path).read_bytes())

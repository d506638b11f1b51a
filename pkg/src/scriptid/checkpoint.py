"""Binary checkpoint container for named tensors plus an architecture blob.

Layout: magic "SSID1", format version u32, UTF-8 descriptor (u32 length
prefix), tensor count u32, then per tensor: name (u16 length + UTF-8),
rank u8, extents u32 each, dtype u8 (0 = float32, 1 = float64), raw
little-endian IEEE-754 payload. All integers little-endian. Tensors are
written in sorted name order so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SSID1"
FORMAT_VERSION = 1

_DTYPE_TO_TAG = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointError(ValueError):
    """Malformed checkpoint file or descriptor/tensor mismatch."""


def save(path, descriptor: dict, tensors: dict) -> None:
    """Write `tensors` (name -> ndarray) under a JSON descriptor."""
    blob = json.dumps(descriptor, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(blob)), blob,
             struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        if arr.dtype not in _DTYPE_TO_TAG:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        for extent in arr.shape:
            parts.append(struct.pack("<I", extent))
        parts.append(struct.pack("<B", _DTYPE_TO_TAG[arr.dtype]))
        parts.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C"))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load(path) -> tuple[dict, dict]:
    """Read (descriptor, tensors). Shape validation is the caller's duty;
    byte layout problems raise CheckpointError here."""
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    descriptor = json.loads(r.take(r.u32()).decode("utf-8"))
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u16()).decode("utf-8")
        rank = r.u8()
        shape = tuple(r.u32() for _ in range(rank))
        tag = r.u8()
        if tag not in _TAG_TO_DTYPE:
            raise CheckpointError(f"{path}: tensor {name!r} has unknown dtype tag {tag}")
        dtype = _TAG_TO_DTYPE[tag]
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        payload = r.take(count * dtype.itemsize)
        tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    if r.pos != len(r.raw):
        raise CheckpointError(f"{path}: {len(r.raw) - r.pos} trailing bytes")
    return descriptor, tensors


def validate_shapes(expected: dict, tensors: dict, path="checkpoint") -> None:
    """Every expected name present with the right shape, nothing extra."""
    missing = sorted(set(expected) - set(tensors))
    extra = sorted(set(tensors) - set(expected))
    if missing or extra:
        raise CheckpointError(f"{path}: tensor names mismatch; missing {missing}, unexpected {extra}")
    for name, shape in expected.items():
        if tuple(tensors[name].shape) != tuple(shape):
            raise CheckpointError(
                f"{path}: tensor {name!r} has shape {tuple(tensors[name].shape)}, descriptor wants {tuple(shape)}"
            )

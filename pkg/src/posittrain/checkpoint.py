"""PSTM tensor container.

Layout (all integers little-endian uint32)::

    b"PSTM" | version | count
    count x ( name_len | name (utf-8) | ndim | dims[ndim] | float64 LE payload )
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"PSTM"
VERSION = 1


class CheckpointError(ValueError):
    def __init__(self, offset: int, message: str):
        super().__init__(f"byte {offset}: {message}")
        self.offset = offset


def dumps(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def loads(data: bytes) -> dict[str, np.ndarray]:
    pos = 0

    def take(size: int, what: str) -> bytes:
        nonlocal pos
        if pos + size > len(data):
            raise CheckpointError(pos, f"truncated {what}")
        chunk = data[pos:pos + size]
        pos += size
        return chunk

    if take(4, "magic") != MAGIC:
        raise CheckpointError(0, "bad magic, expected PSTM")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise CheckpointError(4, f"unsupported version {version}")
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        start = pos
        try:
            name = take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(start, "tensor name is not utf-8") from exc
        (ndim,) = struct.unpack("<I", take(4, "rank"))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim, "dims"))
        size = int(np.prod(dims, dtype=np.int64))
        payload = take(8 * size, f"payload of {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
    if pos != len(data):
        raise CheckpointError(pos, "trailing bytes")
    return tensors


def save(path, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(tensors))


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())

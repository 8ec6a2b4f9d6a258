"""Reader/writer for IDX files (the MNIST container format)."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
_UBYTE = 0x08


class IdxParseError(ValueError):
    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: byte {offset}: {message}")
        self.offset = offset


def read_idx(path, expect_ndim: int | None = None) -> np.ndarray:
    """Read an unsigned-byte IDX file into a uint8 array of the stored shape."""
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise IdxParseError(path, len(data), "truncated magic number")
    zero, dtype, ndim = struct.unpack_from(">HBB", data, 0)
    if zero != 0 or dtype != _UBYTE:
        raise IdxParseError(path, 0, f"bad magic 0x{int.from_bytes(data[:4], 'big'):08x}")
    if expect_ndim is not None and ndim != expect_ndim:
        raise IdxParseError(path, 3, f"expected {expect_ndim} dimensions, found {ndim}")
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxParseError(path, len(data), "truncated dimension header")
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    size = int(np.prod(dims, dtype=np.int64))
    if len(data) < header + size:
        raise IdxParseError(path, len(data), f"truncated payload: need {size} bytes after offset {header}")
    if len(data) > header + size:
        raise IdxParseError(path, header + size, "trailing bytes after payload")
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=header).reshape(dims)


def write_idx(path, array) -> None:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(">HBB", 0, _UBYTE, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.tobytes())


def load_idx_dataset(images_path, labels_path, standardize: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Images as float64 ``[N, 1, rows, cols]`` scaled to [0, 1], labels as int64."""
    images = read_idx(images_path, expect_ndim=3)
    labels = read_idx(labels_path, expect_ndim=1)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    x = images.astype(np.float64)[:, None, :, :] / 255.0
    if standardize and x.size:
        mean = x.mean(axis=(0, 2, 3), keepdims=True)
        std = x.std(axis=(0, 2, 3), keepdims=True)
        x = (x - mean) / np.where(std > 0, std, 1.0)
    return x, labels.astype(np.int64)

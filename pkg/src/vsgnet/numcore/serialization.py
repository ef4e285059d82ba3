"""Binary tensor files.

Layout: magic ``VSGT``, u8 dtype tag (0 = f32, 1 = f64), u8 ndim, ndim
little-endian u32 dims, then the row-major little-endian payload.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

MAGIC = b"VSGT"
_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class TensorFormatError(ValueError):
    pass


def write_tensor(stream: BinaryIO, array) -> None:
    arr = np.asarray(array)
    if arr.dtype not in _CODES:
        raise TensorFormatError(f"unsupported dtype {arr.dtype}")
    if arr.ndim > 255:
        raise TensorFormatError("too many dimensions")
    stream.write(MAGIC)
    stream.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
    stream.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    stream.write(np.ascontiguousarray(arr, dtype=_TAGS[_CODES[arr.dtype]]).tobytes())


def read_tensor(stream: BinaryIO, source: str = "<stream>") -> np.ndarray:
    head = stream.read(6)
    if len(head) < 6 or head[:4] != MAGIC:
        raise TensorFormatError(f"{source}: missing VSGT header")
    tag, ndim = struct.unpack("<BB", head[4:])
    if tag not in _TAGS:
        raise TensorFormatError(f"{source}: unknown dtype tag {tag}")
    raw = stream.read(4 * ndim)
    if len(raw) != 4 * ndim:
        raise TensorFormatError(f"{source}: truncated shape")
    shape = struct.unpack(f"<{ndim}I", raw)
    dtype = _TAGS[tag]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = stream.read(nbytes)
    if len(payload) != nbytes:
        raise TensorFormatError(f"{source}: truncated payload ({len(payload)} of {nbytes} bytes)")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def save_tensor(path, array) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, array)


def load_tensor(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        arr = read_tensor(fh, str(path))
        if fh.read(1):
            raise TensorFormatError(f"{path}: trailing bytes after tensor payload")
    return arr

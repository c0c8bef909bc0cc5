"""RTEN tensor container: a minimal little-endian float32 array file.

Layout::

    b"RTEN" | version u8 (=1) | dtype u8 (0 = f32) | ndim u8 | 3 pad bytes
    ndim x u64 dims (little-endian)
    f32 payload (little-endian, row-major)
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"RTEN"
VERSION = 1
DTYPE_F32 = 0
_HEADER = struct.Struct("<4sBBB3x")


class RtenError(ValueError):
    pass


def to_bytes(array) -> bytes:
    a = np.ascontiguousarray(array, dtype="<f4")
    if a.ndim == 0 or a.ndim > 255:
        raise RtenError(f"unsupported rank {a.ndim}")
    head = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, a.ndim)
    dims = struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + dims + a.tobytes()


def from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise RtenError("truncated header")
    magic, version, dtype, ndim = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise RtenError(f"bad magic {magic!r}")
    if version != VERSION:
        raise RtenError(f"unsupported version {version}")
    if dtype != DTYPE_F32:
        raise RtenError(f"unsupported dtype code {dtype}")
    off = _HEADER.size
    if len(buf) < off + 8 * ndim:
        raise RtenError("truncated dims")
    shape = struct.unpack_from(f"<{ndim}Q", buf, off)
    off += 8 * ndim
    count = int(np.prod(shape))
    if len(buf) != off + 4 * count:
        raise RtenError(f"payload is {len(buf) - off} bytes, expected {4 * count}")
    return np.frombuffer(buf, dtype="<f4", offset=off).reshape(shape).astype(np.float32)


def save(path, array):
    with open(path, "wb") as f:
        f.write(to_bytes(array))


def load(path) -> np.ndarray:
    with open(path, "rb") as f:
        return from_bytes(f.read())

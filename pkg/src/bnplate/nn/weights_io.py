"""The shared "BNPW" weights container.

Layout (little-endian): magic ``BNPW``, u32 version, u32 entry count, then
per parameter tensor: u16 name length, UTF-8 name, u8 rank, u32 dims, and
the values as float32.
"""
from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"BNPW"
VERSION = 1


def dumps(weights: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(weights))]
    for name, arr in weights.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def loads(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise ValueError("not a BNPW weights file")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ValueError(f"unsupported BNPW version {version}")
    pos = 12
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", data, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * size > len(data):
                raise ValueError(f"truncated tensor {name!r}")
            out[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * size
    except struct.error as e:
        raise ValueError(f"truncated BNPW file: {e}") from None
    if pos != len(data):
        raise ValueError("trailing bytes after last tensor")
    return out


def save_weights(path: str | os.PathLike, weights: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(dumps(weights))


def load_weights(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return loads(f.read())

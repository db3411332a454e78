"""Binary PGM (P5) / PPM (P6) reading and writing, maxval 255."""
from __future__ import annotations

import os

import numpy as np


def encode(img: np.ndarray) -> bytes:
    img = np.ascontiguousarray(img, dtype=np.uint8)
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot encode image of shape {img.shape}")
    h, w = img.shape[:2]
    return magic + b"\n%d %d\n255\n" % (w, h) + img.tobytes()


def decode(data: bytes) -> np.ndarray:
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise ValueError("truncated PNM header")
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"unsupported PNM type {magic!r}")
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    c = 1 if magic == b"P5" else 3
    need = w * h * c
    raw = data[pos:pos + need]
    if len(raw) != need:
        raise ValueError(f"expected {need} pixel bytes, found {len(raw)}")
    arr = np.frombuffer(raw, dtype=np.uint8)
    return arr.reshape(h, w) if c == 1 else arr.reshape(h, w, 3)


def read_image(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        return decode(f.read()).copy()


def write_image(path: str | os.PathLike, img: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(encode(img))

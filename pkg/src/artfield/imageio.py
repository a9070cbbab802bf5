"""Binary PPM (P6) / PGM (P5) reading and writing, 8-bit only."""
from __future__ import annotations

from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    pass


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, rgb: np.ndarray) -> None:
    """``rgb`` in [0, 1], shape (H, W, 3)."""
    data = to_uint8(rgb)
    h, w, c = data.shape
    if c != 3:
        raise ImageFormatError("PPM needs 3 channels")
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + data.tobytes())


def write_pgm(path, gray: np.ndarray) -> None:
    data = to_uint8(gray)
    if data.ndim != 2:
        raise ImageFormatError("PGM needs a 2-D array")
    h, w = data.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + data.tobytes())


def _read_netpbm(path, magic: bytes) -> tuple[np.ndarray, int, int]:
    raw = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated header")
        fields.append(raw[start:pos])
    if fields[0] != magic:
        raise ImageFormatError(f"{path}: expected {magic!r}, found {fields[0]!r}")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ImageFormatError(f"{path}: only maxval 255 is supported")
    body = raw[pos + 1:]
    return np.frombuffer(body, dtype=np.uint8), w, h


def read_ppm(path) -> np.ndarray:
    """(H, W, 3) float image in [0, 1]."""
    data, w, h = _read_netpbm(path, b"P6")
    if data.size != w * h * 3:
        raise ImageFormatError(f"{path}: pixel data size mismatch")
    return data.reshape(h, w, 3).astype(np.float64) / 255.0


def read_pgm(path) -> np.ndarray:
    data, w, h = _read_netpbm(path, b"P5")
    if data.size != w * h:
        raise ImageFormatError(f"{path}: pixel data size mismatch")
    return data.reshape(h, w).astype(np.float64) / 255.0

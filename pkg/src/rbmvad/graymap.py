"""Minimal portable graymap (PGM) reader and writer.

Reads binary (P5) and plain (P2) files with 8- or 16-bit samples; writes P5.
16-bit samples are big-endian as the format requires.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class GraymapError(ValueError):
    pass


def _tokens(data: bytes, count: int, pos: int = 0):
    out = []
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise GraymapError("truncated graymap header")
        out.append(data[start:pos])
    return out, pos


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Return (integer image array, maxval)."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P5", b"P2"):
        raise GraymapError(f"{path}: not a portable graymap (magic {magic!r})")
    try:
        (w, h, maxval), pos = _tokens(data, 3, 2)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise GraymapError(f"{path}: bad header") from exc
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise GraymapError(f"{path}: invalid dimensions or maxval")
    if magic == b"P2":
        values, _ = _tokens(data, w * h, pos)
        img = np.array([int(v) for v in values], dtype=np.int64).reshape(h, w)
    else:
        pos += 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = w * h * dtype.itemsize
        raw = data[pos:pos + need]
        if len(raw) < need:
            raise GraymapError(f"{path}: truncated pixel data")
        img = np.frombuffer(raw, dtype=dtype).reshape(h, w).astype(np.int64)
    if img.max(initial=0) > maxval:
        raise GraymapError(f"{path}: sample exceeds maxval")
    return img, maxval


def write_pgm(path, image, maxval: int = 255) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise GraymapError("graymap must be 2-D")
    if not 0 < maxval < 65536:
        raise GraymapError("maxval must lie in 1..65535")
    if img.size and (img.min() < 0 or img.max() > maxval):
        raise GraymapError("sample out of range")
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + img.astype(dtype).tobytes())


def to_gray(values, maxval: int = 255) -> np.ndarray:
    """Quantize [0, 1] floats to integer samples."""
    return np.rint(np.clip(values, 0.0, 1.0) * maxval).astype(np.int64)

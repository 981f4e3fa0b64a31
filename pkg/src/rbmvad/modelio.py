"""Binary detector-model files.

All integers are unsigned little-endian, all reals little-endian float64::

    magic       8 bytes  b"RBMVAD\\x00\\x1a"
    version     u32      FORMAT_VERSION
    height      u32      frame height the model scores
    width       u32
    patch_h     u32
    patch_w     u32
    overlap     f64
    n_scales    u32
    ratios      f64 * n_scales
    beta        f64
    gamma       u32
    seed        u64
    kernel_len  u32, then kernel_len bytes of ASCII (interpolation kernel)
    per scale, in ratio order:
        ratio       f64
        cluster RBM (see below)
        grid_h u32, grid_w u32, labels i64 * grid_h * grid_w (row-major)
        n_clusters  u32
        per cluster, ascending label: label i64, RBM
    RBM:
        M u32, K u32, visible bias f64 * M, hidden bias f64 * K,
        weights f64 * M * K (row-major, M rows)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .clustering import ClusterMap
from .detector import DetectorModel, ScaleModel
from .patches import ScaleConfig
from .rbm import RbmParams

MAGIC = b"RBMVAD\x00\x1a"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


class _Writer:
    def __init__(self):
        self.parts = []

    def u32(self, v):
        self.parts.append(struct.pack("<I", v))

    def u64(self, v):
        self.parts.append(struct.pack("<Q", v))

    def i64(self, v):
        self.parts.append(struct.pack("<q", v))

    def f64(self, v):
        self.parts.append(struct.pack("<d", v))

    def array(self, a, dtype):
        self.parts.append(np.ascontiguousarray(a, dtype=dtype).tobytes())

    def rbm(self, p: RbmParams):
        self.u32(p.n_visible)
        self.u32(p.n_hidden)
        self.array(p.visible_bias, "<f8")
        self.array(p.hidden_bias, "<f8")
        self.array(p.weights, "<f8")


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ModelFormatError("model file is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]

    def u32(self):
        return self.unpack("<I")

    def u64(self):
        return self.unpack("<Q")

    def i64(self):
        return self.unpack("<q")

    def f64(self):
        return self.unpack("<d")

    def array(self, n, dtype):
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(n * dt.itemsize), dtype=dt).astype(dt.newbyteorder("="))

    def rbm(self):
        m, k = self.u32(), self.u32()
        a = self.array(m, "<f8")
        b = self.array(k, "<f8")
        w = self.array(m * k, "<f8").reshape(m, k)
        return RbmParams(a, b, w)


def model_to_bytes(model: DetectorModel) -> bytes:
    sc = model.scale_config
    w = _Writer()
    w.parts.append(MAGIC)
    w.u32(FORMAT_VERSION)
    w.u32(model.frame_shape[0])
    w.u32(model.frame_shape[1])
    w.u32(sc.patch_h)
    w.u32(sc.patch_w)
    w.f64(sc.overlap)
    w.u32(len(model.scales))
    for sm in model.scales:
        w.f64(sm.ratio)
    w.f64(model.beta)
    w.u32(model.gamma)
    w.u64(model.seed)
    kernel = model.interpolation.encode("ascii")
    w.u32(len(kernel))
    w.parts.append(kernel)
    for sm in model.scales:
        w.f64(sm.ratio)
        w.rbm(sm.cluster_rbm)
        labels = sm.cluster_map.labels
        w.u32(labels.shape[0])
        w.u32(labels.shape[1])
        w.array(labels, "<i8")
        w.u32(len(sm.rbms))
        for label in sorted(sm.rbms):
            w.i64(label)
            w.rbm(sm.rbms[label])
    return b"".join(w.parts)


def model_from_bytes(data: bytes, patch_shape: tuple | None = None) -> DetectorModel:
    """Parse a model file.

    Args:
        patch_shape: optional (patch_h, patch_w) the caller expects; a model
            built for a different patch size is rejected.
    """
    r = _Reader(data)
    magic = r.take(len(MAGIC))
    if magic != MAGIC:
        raise ModelFormatError(f"not a detector model file (bad magic {magic!r}); "
                               f"expected format version {FORMAT_VERSION}")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}, expected {FORMAT_VERSION}")
    height, width = r.u32(), r.u32()
    patch_h, patch_w = r.u32(), r.u32()
    overlap = r.f64()
    ratios = [r.f64() for _ in range(r.u32())]
    beta = r.f64()
    gamma = r.u32()
    seed = r.u64()
    kernel = r.take(r.u32()).decode("ascii")
    if patch_shape is not None and tuple(patch_shape) != (patch_h, patch_w):
        raise ModelFormatError(f"model uses {patch_h}x{patch_w} patches "
                               f"({patch_h * patch_w} visible units), configuration expects "
                               f"{patch_shape[0]}x{patch_shape[1]}")
    scales = []
    for expected in ratios:
        ratio = r.f64()
        if ratio != expected:
            raise ModelFormatError("scale section out of order")
        small = r.rbm()
        gh, gw = r.u32(), r.u32()
        labels = r.array(gh * gw, "<i8").reshape(gh, gw)
        rbms = {}
        for _ in range(r.u32()):
            label = r.i64()
            rbms[label] = r.rbm()
        scales.append(ScaleModel(ratio, small, ClusterMap(ratio, labels), rbms))
    if r.pos != len(data):
        raise ModelFormatError("trailing bytes after model data")
    try:
        return DetectorModel((height, width), ScaleConfig(tuple(ratios), patch_h, patch_w, overlap),
                             scales, beta, gamma, seed, kernel)
    except ValueError as exc:
        raise ModelFormatError(f"inconsistent model file: {exc}") from exc


def save_model(path, model: DetectorModel) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path, patch_shape: tuple | None = None) -> DetectorModel:
    return model_from_bytes(Path(path).read_bytes(), patch_shape)

"""Synthetic surveillance-like datasets with planted anomalies.

The background is a fixed low-frequency texture (from ``texture_seed``) plus
per-frame sensor noise (from the run seed), optionally brightening linearly
over time. Anomalies are constant-intensity rectangles shown over a closed
range of frames.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import DatasetLayout
from .graymap import to_gray, write_pgm
from .patches import resize_bilinear


@dataclass(frozen=True)
class BackgroundSpec:
    height: int = 160
    width: int = 240
    texture_seed: int = 0
    mean: float = 0.4
    contrast: float = 0.3
    cell: int = 16
    detail: float = 0.05
    noise_std: float = 0.02
    drift: float = 0.0


@dataclass(frozen=True)
class Plant:
    """Rectangle shown on frames ``start`` to ``end`` inclusive."""

    start: int
    end: int
    top: int
    left: int
    height: int
    width: int
    intensity: float = 1.0

    @classmethod
    def parse(cls, text: str) -> "Plant":
        """``start:end:top:left:height:width[:intensity]``"""
        parts = text.split(":")
        if len(parts) not in (6, 7):
            raise ValueError(f"plant {text!r}: expected start:end:top:left:height:width[:intensity]")
        ints = [int(p) for p in parts[:6]]
        return cls(*ints, float(parts[6]) if len(parts) == 7 else 1.0)


def background_texture(spec: BackgroundSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.texture_seed)
    coarse_shape = (max(2, spec.height // spec.cell + 1), max(2, spec.width // spec.cell + 1))
    low = resize_bilinear(rng.random(coarse_shape), spec.height, spec.width)
    fine = resize_bilinear(rng.random((max(2, spec.height // 3), max(2, spec.width // 3))),
                           spec.height, spec.width)
    return spec.mean + spec.contrast * (low - 0.5) + spec.detail * (fine - 0.5)


def render(n_frames: int, spec: BackgroundSpec, plants=(), seed: int = 0):
    """Generate frames, masks and frame labels in memory.

    Frames are quantized to 8 bits so they match what ``synth_generate``
    writes to disk.

    Returns:
        (frames (N, H, W) float, masks (N, H, W) bool, labels (N,) int)
    """
    for p in plants:
        if (p.start < 0 or p.end < p.start or p.end >= n_frames or p.top < 0 or p.left < 0
                or p.height < 1 or p.width < 1
                or p.top + p.height > spec.height or p.left + p.width > spec.width):
            raise ValueError(f"plant {p} lies outside the {n_frames}x{spec.height}x{spec.width} volume")
    rng = np.random.default_rng(seed)
    base = background_texture(spec)
    frames = np.empty((n_frames, spec.height, spec.width))
    masks = np.zeros(frames.shape, dtype=bool)
    for t in range(n_frames):
        frames[t] = base + spec.drift * t + rng.normal(0.0, spec.noise_std, base.shape)
    for p in plants:
        sl = (slice(p.start, p.end + 1), slice(p.top, p.top + p.height), slice(p.left, p.left + p.width))
        frames[sl] = p.intensity
        masks[sl] = True
    frames = to_gray(frames) / 255.0
    labels = masks.reshape(n_frames, -1).any(axis=1).astype(np.int64)
    return frames, masks, labels


def synth_generate(out_dir, n_frames: int, spec: BackgroundSpec, plants=(), seed: int = 0) -> DatasetLayout:
    """Write a synthetic dataset in the standard directory layout."""
    frames, masks, labels = render(n_frames, spec, plants, seed)
    root = Path(out_dir)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for t in range(n_frames):
        name = f"{t:06d}.pgm"
        write_pgm(root / "frames" / name, to_gray(frames[t]))
        write_pgm(root / "masks" / name, masks[t].astype(np.int64) * 255)
    (root / "labels.txt").write_text("".join(f"{int(v)}\n" for v in labels))
    return DatasetLayout(root / "frames", root / "masks", root / "labels.txt")

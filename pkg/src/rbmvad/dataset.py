"""Frame-directory datasets.

Layout::

    root/
      frames/000000.pgm, 000001.pgm, ...   zero-padded, consecutive numbers
      masks/000000.pgm, ...                optional, same names, nonzero = anomaly
      labels.txt                           optional, one 0/1 per line
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graymap import read_pgm
from .patches import normalize_frame, resize_bilinear, upsample_map


@dataclass(frozen=True)
class DatasetLayout:
    frames_dir: Path
    masks_dir: Path | None = None
    labels_path: Path | None = None

    @classmethod
    def from_root(cls, root) -> "DatasetLayout":
        root = Path(root)
        masks = root / "masks"
        labels = root / "labels.txt"
        return cls(root / "frames", masks if masks.is_dir() else None,
                   labels if labels.is_file() else None)


@dataclass
class Dataset:
    frames: np.ndarray                 # (N, H, W) floats in [0, 1]
    masks: np.ndarray | None = None    # (N, H, W) bool
    labels: np.ndarray | None = None   # (N,) int
    names: tuple = ()

    def __len__(self):
        return self.frames.shape[0]


_NUMBER = re.compile(r"(\d+)")


def _frame_number(path: Path) -> int:
    digits = _NUMBER.findall(path.stem)
    if not digits:
        raise ValueError(f"{path.name}: file name carries no frame number")
    return int(digits[-1])


def list_frames(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory}: no such directory")
    files = sorted((p for p in directory.iterdir() if p.suffix.lower() == ".pgm"), key=_frame_number)
    if not files:
        raise ValueError(f"{directory}: no frames")
    numbers = [_frame_number(p) for p in files]
    expected = list(range(numbers[0], numbers[0] + len(numbers)))
    if numbers != expected:
        missing = sorted(set(expected) - set(numbers))
        raise ValueError(f"{directory}: gap in frame numbering (missing {missing[:5]})")
    return files


def read_labels(path, n: int | None = None) -> np.ndarray:
    values = [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]
    labels = np.array([int(v) for v in values], dtype=np.int64)
    if np.any((labels != 0) & (labels != 1)):
        raise ValueError(f"{path}: labels must be 0 or 1")
    if n is not None and labels.size != n:
        raise ValueError(f"{path}: {labels.size} labels for {n} frames")
    return labels


def _resize_mask(mask: np.ndarray, shape) -> np.ndarray:
    if mask.shape == tuple(shape):
        return mask
    if shape[0] >= mask.shape[0] and shape[1] >= mask.shape[1]:
        return upsample_map(mask, shape)
    rows = (np.arange(shape[0]) * mask.shape[0]) // shape[0]
    cols = (np.arange(shape[1]) * mask.shape[1]) // shape[1]
    return mask[rows[:, None], cols[None, :]]


def load_dataset(layout: DatasetLayout, resize_to: tuple | None = None) -> Dataset:
    """Read, normalize and optionally resize every frame (and mask)."""
    files = list_frames(layout.frames_dir)
    frames = []
    shape = None
    for path in files:
        raw, maxval = read_pgm(path)
        if shape is None:
            shape = raw.shape
        elif raw.shape != shape:
            raise ValueError(f"{path.name}: size {raw.shape} differs from {shape}")
        frame = normalize_frame(raw, maxval)
        if resize_to is not None and tuple(resize_to) != shape:
            frame = np.clip(resize_bilinear(frame, *resize_to), 0.0, 1.0)
        frames.append(frame)
    out_shape = frames[0].shape

    masks = None
    if layout.masks_dir is not None:
        masks = []
        for path in files:
            mpath = Path(layout.masks_dir) / path.name
            if not mpath.is_file():
                raise ValueError(f"missing mask {mpath}")
            raw, _ = read_pgm(mpath)
            if raw.shape != shape:
                raise ValueError(f"{mpath.name}: mask size differs from frames")
            masks.append(_resize_mask(raw > 0, out_shape))
        masks = np.stack(masks)

    labels = None
    if layout.labels_path is not None:
        labels = read_labels(layout.labels_path, len(files))
    elif masks is not None:
        labels = masks.reshape(len(files), -1).any(axis=1).astype(np.int64)
    return Dataset(np.stack(frames), masks, labels, tuple(p.name for p in files))

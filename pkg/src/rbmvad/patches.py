"""Multi-scale overlapping patch grids and their reassembly into pixel maps.

Frames are float arrays with values in [0, 1]. Most functions also accept a
stack of frames with arbitrary leading axes, e.g. (L, H, W) for a chunk.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

INTERPOLATION = "bilinear"


@dataclass(frozen=True)
class ScaleConfig:
    ratios: tuple = (1.0, 0.5, 0.25)
    patch_h: int = 12
    patch_w: int = 18
    overlap: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        if not self.ratios or any(not 0 < r <= 1 for r in self.ratios):
            raise ValueError("scale ratios must lie in (0, 1]")
        if self.patch_h < 1 or self.patch_w < 1:
            raise ValueError("patch dimensions must be positive")
        if not 0 <= self.overlap < 1:
            raise ValueError("overlap must lie in [0, 1)")
        for dim in (self.patch_h, self.patch_w):
            stride = dim * (1 - self.overlap)
            if abs(stride - round(stride)) > 1e-9 or round(stride) < 1:
                raise ValueError(f"overlap {self.overlap} gives a non-integer stride for patch size {dim}")

    @property
    def stride_r(self) -> int:
        return int(round(self.patch_h * (1 - self.overlap)))

    @property
    def stride_c(self) -> int:
        return int(round(self.patch_w * (1 - self.overlap)))

    @property
    def patch_size(self) -> int:
        return self.patch_h * self.patch_w


@dataclass
class PatchGrid:
    """Flattened patches of one frame (or a stack of frames) at one scale.

    ``patches`` has shape (..., N_h, N_w, patch_h * patch_w), row-major
    within each patch. ``row_starts[i]``/``col_starts[j]`` give the top-left
    corner of grid location (i, j) in the scaled frame.
    """

    scale: float
    patch_h: int
    patch_w: int
    stride_r: int
    stride_c: int
    row_starts: np.ndarray
    col_starts: np.ndarray
    frame_shape: tuple
    patches: np.ndarray

    @property
    def grid_shape(self) -> tuple:
        return (self.row_starts.size, self.col_starts.size)


def normalize_frame(raw, max_value: int) -> np.ndarray:
    raw = np.asarray(raw)
    if max_value <= 0:
        raise ValueError("max_value must be positive")
    if raw.size and (raw.min() < 0 or raw.max() > max_value):
        raise ValueError(f"raw values must lie in [0, {max_value}]")
    return raw.astype(np.float64) / max_value


def scaled_shape(shape, ratio: float) -> tuple:
    return tuple(int(np.floor(d * ratio + 0.5)) for d in shape)


def _interp_axis(n_in: int, n_out: int):
    # Pixel-centre alignment, clamped at the borders.
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_bilinear(img, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of the last two axes to (out_h, out_w)."""
    img = np.asarray(img, dtype=np.float64)
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be positive")
    h, w = img.shape[-2:]
    if (h, w) == (out_h, out_w):
        return img.copy()
    r0, r1, fr = _interp_axis(h, out_h)
    c0, c1, fc = _interp_axis(w, out_w)
    fr = fr[:, None]
    rows = img[..., r0, :] * (1 - fr) + img[..., r1, :] * fr
    return rows[..., c0] * (1 - fc) + rows[..., c1] * fc


def rescale_frame(frame, ratio: float, min_shape: tuple | None = None) -> np.ndarray:
    """Downscale by ``ratio`` to (round(H*ratio), round(W*ratio)), bilinear."""
    if not 0 < ratio <= 1:
        raise ValueError("ratio must lie in (0, 1]")
    frame = np.asarray(frame, dtype=np.float64)
    out_h, out_w = scaled_shape(frame.shape[-2:], ratio)
    if min_shape is not None and (out_h < min_shape[0] or out_w < min_shape[1]):
        raise ValueError(f"frame rescaled to {out_h}x{out_w} is smaller than patch {min_shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError("rescaled frame is empty")
    out = resize_bilinear(frame, out_h, out_w)
    return np.clip(out, 0.0, 1.0)


def grid_starts(dim: int, patch: int, stride: int) -> np.ndarray:
    """Patch start offsets along one axis; a final patch is anchored flush to
    the edge when the stride does not divide ``dim - patch``."""
    if dim < patch:
        raise ValueError(f"dimension {dim} smaller than patch {patch}")
    starts = list(range(0, dim - patch + 1, stride))
    if starts[-1] != dim - patch:
        starts.append(dim - patch)
    return np.asarray(starts, dtype=np.int64)


def extract_patches(frame, cfg: ScaleConfig, scale: float = 1.0) -> PatchGrid:
    """Rescale ``frame`` by ``scale`` and cut it into an overlapping grid."""
    frame = np.asarray(frame, dtype=np.float64)
    if scale != 1.0:
        frame = rescale_frame(frame, scale, (cfg.patch_h, cfg.patch_w))
    h, w = frame.shape[-2:]
    if h < cfg.patch_h or w < cfg.patch_w:
        raise ValueError(f"frame {h}x{w} smaller than patch {cfg.patch_h}x{cfg.patch_w}")
    rows = grid_starts(h, cfg.patch_h, cfg.stride_r)
    cols = grid_starts(w, cfg.patch_w, cfg.stride_c)
    windows = sliding_window_view(frame, (cfg.patch_h, cfg.patch_w), axis=(-2, -1))
    windows = windows[..., rows, :, :, :][..., cols, :, :]
    patches = windows.reshape(*windows.shape[:-2], cfg.patch_size).copy()
    return PatchGrid(scale, cfg.patch_h, cfg.patch_w, cfg.stride_r, cfg.stride_c,
                     rows, cols, (h, w), patches)


def assemble_map(values, grid: PatchGrid, out_shape: tuple | None = None) -> np.ndarray:
    """Paste per-patch values back into the scaled frame, averaging overlaps.

    Args:
        values: either one scalar per location, shape (..., N_h, N_w), which
            is broadcast over the patch footprint, or full pixel blocks of
            shape (..., N_h, N_w, patch_h * patch_w).
        grid: the grid the values belong to.
        out_shape: (H, W) of the output; defaults to the grid's frame shape.
    """
    values = np.asarray(values, dtype=np.float64)
    out_shape = tuple(out_shape) if out_shape is not None else grid.frame_shape
    n_h, n_w = grid.grid_shape
    ph, pw = grid.patch_h, grid.patch_w
    if values.shape[-2:] == (n_h, n_w):
        blocks = False
        lead = values.shape[:-2]
    elif values.shape[-3:] == (n_h, n_w, ph * pw):
        blocks = True
        lead = values.shape[:-3]
        values = values.reshape(*lead, n_h, n_w, ph, pw)
    else:
        raise ValueError(f"values shape {values.shape} does not match grid {n_h}x{n_w}")
    if grid.row_starts[-1] + ph > out_shape[0] or grid.col_starts[-1] + pw > out_shape[1]:
        raise ValueError("grid does not fit inside the output shape")

    acc = np.zeros(lead + out_shape)
    count = np.zeros(out_shape)
    for i, r in enumerate(grid.row_starts):
        for j, c in enumerate(grid.col_starts):
            if blocks:
                acc[..., r:r + ph, c:c + pw] += values[..., i, j, :, :]
            else:
                acc[..., r:r + ph, c:c + pw] += values[..., i, j, None, None]
            count[r:r + ph, c:c + pw] += 1
    if np.any(count == 0):
        raise ValueError("grid leaves pixels uncovered")
    return acc / count


def upsample_map(score_map, target: tuple) -> np.ndarray:
    """Nearest-neighbour upsampling of the last two axes to ``target``."""
    score_map = np.asarray(score_map)
    h, w = score_map.shape[-2:]
    th, tw = target
    if th < h or tw < w:
        raise ValueError(f"target {target} smaller than source {(h, w)}")
    rows = (np.arange(th) * h) // th
    cols = (np.arange(tw) * w) // tw
    return score_map[..., rows[:, None], cols[None, :]]


def fuse_scales_max(maps) -> np.ndarray:
    maps = [np.asarray(m) for m in maps]
    if not maps:
        raise ValueError("no maps to fuse")
    shape = maps[0].shape
    if any(m.shape != shape for m in maps):
        raise ValueError("maps must share one shape")
    out = maps[0].copy()
    for m in maps[1:]:
        np.maximum(out, m, out=out)
    return out

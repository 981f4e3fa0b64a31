"""Training and detection with per-region RBMs.

Training: for every scale, cluster patch locations with a small RBM, then
train one larger RBM per cluster on that cluster's patches.

Detection works on chunks of consecutive frames. Each patch is
reconstructed by the RBM of its location's cluster and scored by the L2
norm of its absolute reconstruction error divided by the patch pixel
count. Patch scores are spread over their footprint (overlaps averaged),
brought back to full resolution, fused across scales with ``max`` and
thresholded at ``beta``. Because ``max(x_1, ..., x_S) >= beta`` holds exactly
when some ``x_s >= beta``, merging before thresholding gives the same
indicator as the union of per-scale thresholded maps. Overlap averaging
within a scale does not commute with thresholding, so patch scores are
averaged first. Connected components of the resulting 3-D
indicator that never cover ``gamma`` consecutive frames are dropped. In
streaming mode every cluster RBM is then refined on the chunk it has just
scored.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .clustering import ClusterMap, build_cluster_map
from .config import RunConfig, derive_seed
from .patches import (
    INTERPOLATION,
    ScaleConfig,
    assemble_map,
    extract_patches,
    fuse_scales_max,
    upsample_map,
)
from .rbm import RbmParams, TrainConfig, reconstruct, train

log = logging.getLogger(__name__)

_NEIGHBOURHOOD_26 = np.ones((3, 3, 3), dtype=bool)


@dataclass
class ScaleModel:
    ratio: float
    cluster_rbm: RbmParams
    cluster_map: ClusterMap
    rbms: dict = field(default_factory=dict)


@dataclass
class DetectorModel:
    """Everything needed to score frames of shape ``frame_shape``."""

    frame_shape: tuple
    scale_config: ScaleConfig
    scales: list
    beta: float = 0.003
    gamma: int = 10
    seed: int = 0
    interpolation: str = INTERPOLATION

    def __post_init__(self):
        self.frame_shape = tuple(int(d) for d in self.frame_shape)
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")
        d = self.scale_config.patch_size
        for sm in self.scales:
            missing = set(sm.cluster_map.unique_labels) - set(sm.rbms)
            if missing:
                raise ValueError(f"scale {sm.ratio}: no RBM for clusters {sorted(missing)}")
            for params in [sm.cluster_rbm, *sm.rbms.values()]:
                if params.n_visible != d:
                    raise ValueError(f"RBM with {params.n_visible} visible units does not "
                                     f"match {self.scale_config.patch_h}x{self.scale_config.patch_w} patches")

    def copy(self) -> "DetectorModel":
        scales = [ScaleModel(sm.ratio, sm.cluster_rbm.copy(), ClusterMap(sm.cluster_map.scale,
                                                                         sm.cluster_map.labels.copy()),
                             {c: p.copy() for c, p in sm.rbms.items()})
                  for sm in self.scales]
        return DetectorModel(self.frame_shape, self.scale_config, scales, self.beta, self.gamma,
                             self.seed, self.interpolation)

    @property
    def n_rbms(self) -> int:
        return sum(len(sm.rbms) for sm in self.scales)


def _as_frames(frames) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 2:
        frames = frames[None]
    if frames.ndim != 3 or frames.shape[0] == 0:
        raise ValueError("expected a non-empty (N, H, W) frame stack")
    return frames


def train_detector(frames, cfg: RunConfig) -> DetectorModel:
    """Fit cluster maps and per-cluster RBMs on normal training frames."""
    frames = _as_frames(frames)
    sc = cfg.scale_config()
    d = sc.patch_size
    scales = []
    for s, ratio in enumerate(sc.ratios):
        grid = extract_patches(frames, sc, ratio)
        small, cmap = build_cluster_map(
            grid.patches, cfg.train_config(cfg.k_cluster, cfg.cluster_epochs, derive_seed(cfg.seed, s, 0)),
            ratio)
        log.info("scale %.3g: grid %s, %d clusters", ratio, grid.grid_shape, cmap.n_clusters)
        rbms = {}
        for label in cmap.unique_labels:
            x = grid.patches[:, cmap.labels == label].reshape(-1, d)
            if cfg.max_train_patches and x.shape[0] > cfg.max_train_patches:
                rng = np.random.default_rng(derive_seed(cfg.seed, s, 1, label))
                x = x[np.sort(rng.choice(x.shape[0], cfg.max_train_patches, replace=False))]
            rbms[label] = train(x, cfg.train_config(cfg.k_detect, cfg.epochs,
                                                    derive_seed(cfg.seed, s, 2, label)))
        scales.append(ScaleModel(ratio, small, cmap, rbms))
    return DetectorModel(frames.shape[1:], sc, scales, cfg.beta, cfg.gamma, cfg.seed)


def patch_error(patch, params: RbmParams):
    """Reconstruction error of one patch (or a stack of patches).

    Returns:
        (error_block, avg) where ``error_block = |x - reconstruct(x)|`` and
        ``avg = ||error_block||_2 / patch_size``.
    """
    x = np.asarray(patch, dtype=np.float64)
    block = np.abs(x - reconstruct(x, params))
    return block, np.linalg.norm(block, axis=-1) / x.shape[-1]


@dataclass
class _ScaleScores:
    avg: np.ndarray        # (L, N_h, N_w) average patch errors
    patches: np.ndarray    # (L, N_h, N_w, D)


def _score_scales(chunk: np.ndarray, model: DetectorModel):
    if chunk.shape[1:] != model.frame_shape:
        raise ValueError(f"frame shape {chunk.shape[1:]} does not match model {model.frame_shape}")
    sc = model.scale_config
    maps, per_scale = [], []
    for sm in model.scales:
        grid = extract_patches(chunk, sc, sm.ratio)
        if grid.grid_shape != sm.cluster_map.labels.shape:
            raise ValueError("patch grid does not match the stored cluster map")
        avg = np.empty(grid.patches.shape[:-1])
        for label, params in sm.rbms.items():
            mask = sm.cluster_map.labels == label
            _, avg[:, mask] = patch_error(grid.patches[:, mask], params)
        per_scale.append(_ScaleScores(avg, grid.patches))
        maps.append(upsample_map(assemble_map(avg, grid), model.frame_shape))
    return fuse_scales_max(maps), per_scale


def score_chunk(chunk, model: DetectorModel):
    """Fused average-error maps and the unfiltered indicator of a chunk.

    Returns:
        (errors, indicator): float array (L, H, W) and boolean array
        (L, H, W) with ``indicator = errors >= model.beta``.
    """
    errors, _ = _score_scales(_as_frames(chunk), model)
    return errors, errors >= model.beta


def connected_components_3d(indicator) -> list:
    """26-connected components of the 1-voxels, each as an (n, 3) array of
    (t, i, j) coordinates in raster order."""
    labels, n = ndimage.label(np.asarray(indicator, dtype=bool), structure=_NEIGHBOURHOOD_26)
    if n == 0:
        return []
    coords = np.argwhere(labels)
    ids = labels[tuple(coords.T)]
    order = np.argsort(ids, kind="stable")
    bounds = np.searchsorted(ids[order], np.arange(1, n + 2))
    return [coords[order[bounds[k]:bounds[k + 1]]] for k in range(n)]


def longest_run(frame_indices) -> int:
    """Length of the longest stretch of consecutive integers."""
    ts = np.unique(np.asarray(frame_indices, dtype=np.int64))
    if ts.size == 0:
        return 0
    breaks = np.flatnonzero(np.diff(ts) != 1)
    edges = np.concatenate([[-1], breaks, [ts.size - 1]])
    return int(np.max(np.diff(edges)))


def filter_components(components, gamma: int, indicator) -> np.ndarray:
    """Keep only components whose frames contain a run of ``gamma`` or more
    consecutive indices."""
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    out = np.zeros(np.shape(indicator), dtype=bool)
    for comp in components:
        if longest_run(comp[:, 0]) >= gamma:
            out[tuple(comp.T)] = True
    return out


def filter_indicator(indicator, gamma: int) -> np.ndarray:
    """Label and filter in one pass; same result as ``filter_components``."""
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    z = np.asarray(indicator, dtype=bool)
    if gamma == 1 or not z.any():
        return z.copy()
    labels, n = ndimage.label(z, structure=_NEIGHBOURHOOD_26)
    present = np.zeros((n + 1, z.shape[0]), dtype=bool)
    for t in range(z.shape[0]):
        present[np.unique(labels[t]), t] = True
    run = np.zeros(n + 1, dtype=np.int64)
    best = np.zeros(n + 1, dtype=np.int64)
    for t in range(z.shape[0]):
        run = np.where(present[:, t], run + 1, 0)
        np.maximum(best, run, out=best)
    keep = best >= gamma
    keep[0] = False
    return keep[labels]


def incremental_update(patches_by_cluster: dict, model: DetectorModel, epochs: int = 20,
                       train_cfg: TrainConfig | None = None, seed: int = 0) -> DetectorModel:
    """Refine cluster RBMs on newly seen patches.

    Args:
        patches_by_cluster: maps ``(scale_index, label)`` to an (n, D) array.
        model: left untouched; an updated copy is returned.
        epochs: CD passes over each cluster's new patches.
        train_cfg: learning rate, batch size etc.; ``n_hidden``, ``epochs``
            and ``seed`` are overridden.
        seed: base seed for this update round.
    """
    base = train_cfg or TrainConfig()
    updated = model.copy()
    for (s, label), x in sorted(patches_by_cluster.items()):
        x = np.asarray(x, dtype=np.float64)
        if x.size == 0 or epochs == 0:
            continue
        sm = updated.scales[s]
        params = sm.rbms[label]
        cfg = TrainConfig(
            n_hidden=params.n_hidden, learning_rate=base.learning_rate, cd_steps=base.cd_steps,
            epochs=epochs, batch_size=base.batch_size, seed=derive_seed(seed, s, label),
            init_weight_std=base.init_weight_std, persistent=base.persistent,
            momentum=base.momentum, weight_decay=base.weight_decay)
        sm.rbms[label] = train(x, cfg, init=params)
    return updated


def chunk_patches_by_cluster(per_scale, model: DetectorModel) -> dict:
    out = {}
    d = model.scale_config.patch_size
    for s, (sm, scores) in enumerate(zip(model.scales, per_scale)):
        for label in sm.rbms:
            mask = sm.cluster_map.labels == label
            out[(s, label)] = scores.patches[:, mask].reshape(-1, d)
    return out


@dataclass
class ChunkResult:
    start: int
    errors: np.ndarray
    indicator: np.ndarray

    @property
    def scores(self) -> np.ndarray:
        return np.where(self.indicator, self.errors, 0.0)


@dataclass
class DetectionResult:
    errors: np.ndarray
    indicator: np.ndarray
    model: DetectorModel

    @property
    def scores(self) -> np.ndarray:
        """Fused errors where the filtered indicator is set, else 0."""
        return np.where(self.indicator, self.errors, 0.0)

    @property
    def frame_scores(self) -> np.ndarray:
        return self.errors.reshape(self.errors.shape[0], -1).max(axis=1)


def iter_detect(frames, model: DetectorModel, streaming: bool = False,
                config: RunConfig | None = None):
    """Yield a ``ChunkResult`` per non-overlapping chunk.

    In streaming mode the chunk is scored first and the model updated
    afterwards, so an anomaly never adapts the model before it is scored.
    Use ``detect_stream`` to also get the adapted model back.
    """
    yield from _detect(frames, model, streaming, config or RunConfig(), holder=None)


def _detect(frames, model, streaming, cfg, holder):
    frames = _as_frames(frames)
    current = model
    train_cfg = cfg.train_config(1, cfg.update_epochs, 0)
    for k, start in enumerate(range(0, frames.shape[0], cfg.chunk_length)):
        chunk = frames[start:start + cfg.chunk_length]
        errors, per_scale = _score_scales(chunk, current)
        indicator = filter_indicator(errors >= current.beta, current.gamma)
        yield ChunkResult(start, errors, indicator)
        if streaming:
            current = incremental_update(chunk_patches_by_cluster(per_scale, current), current,
                                         cfg.update_epochs, train_cfg, derive_seed(cfg.seed, 1000, k))
        if holder is not None:
            holder[0] = current


def detect_stream(frames, model: DetectorModel, streaming: bool = False,
                  config: RunConfig | None = None) -> DetectionResult:
    """Run detection over a whole frame sequence, chunk by chunk."""
    holder = [model]
    chunks = list(_detect(frames, model, streaming, config or RunConfig(), holder))
    errors = np.concatenate([c.errors for c in chunks])
    indicator = np.concatenate([c.indicator for c in chunks])
    return DetectionResult(errors, indicator, holder[0])


def calibrate_beta(frames, model: DetectorModel, quantile: float = 0.999) -> float:
    """Threshold at the given quantile of fused errors on normal frames."""
    frames = _as_frames(frames)
    errors = np.concatenate([_score_scales(frames[i:i + 20], model)[0]
                             for i in range(0, frames.shape[0], 20)])
    return float(np.quantile(errors, quantile))

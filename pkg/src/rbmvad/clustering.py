"""Region clustering of patch locations.

A small RBM (a handful of hidden units) is trained on every patch at one
scale. Each patch gets a pseudo-label by thresholding its hidden posterior
at 0.5 and reading the bits as a binary number, first hidden unit most
significant. Every grid location then takes the most frequent pseudo-label
over the training frames. A k-means baseline produces the same kind of map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rbm import RbmParams, TrainConfig, hidden_conditional, train


@dataclass
class ClusterMap:
    """Per-location cluster labels at one scale."""

    scale: float
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 2:
            raise ValueError("cluster labels must form a 2-D grid")

    @property
    def unique_labels(self) -> list[int]:
        return [int(c) for c in np.unique(self.labels)]

    @property
    def n_clusters(self) -> int:
        return len(self.unique_labels)

    def __eq__(self, other):
        if not isinstance(other, ClusterMap):
            return NotImplemented
        return self.scale == other.scale and np.array_equal(self.labels, other.labels)


def bits_to_label(bits) -> np.ndarray:
    """Read binary rows as integers, first column most significant."""
    bits = np.asarray(bits, dtype=np.int64)
    k = bits.shape[-1]
    weights = 1 << np.arange(k - 1, -1, -1, dtype=np.int64)
    return bits @ weights


def pseudo_label(patch, small_rbm: RbmParams):
    """Pseudo-label(s) of one patch or of a stack of patches."""
    posterior = hidden_conditional(patch, small_rbm)
    return bits_to_label(posterior > 0.5)


def vote_location_labels(labels_over_time) -> int:
    """Modal label; ties go to the smallest label."""
    labels = np.asarray(labels_over_time, dtype=np.int64).ravel()
    if labels.size == 0:
        raise ValueError("cannot vote over an empty sequence")
    values, counts = np.unique(labels, return_counts=True)
    return int(values[np.argmax(counts)])


def vote_grid(pseudo_labels, n_labels: int) -> np.ndarray:
    """Vectorised voting over the first axis of an (N, N_h, N_w) array."""
    pl = np.asarray(pseudo_labels, dtype=np.int64)
    if pl.shape[0] == 0:
        raise ValueError("need at least one frame to vote")
    n_h, n_w = pl.shape[1:]
    loc = np.arange(n_h * n_w).reshape(1, n_h, n_w)
    counts = np.bincount((loc * n_labels + pl).ravel(), minlength=n_h * n_w * n_labels)
    return counts.reshape(n_h, n_w, n_labels).argmax(axis=-1)


def merge_small_clusters(labels: np.ndarray, n_frames: int, min_patches: int) -> np.ndarray:
    """Fold clusters with fewer than ``min_patches`` training patches into the
    most frequent cluster (smallest label on ties)."""
    values, counts = np.unique(labels, return_counts=True)
    dominant = values[np.argmax(counts)]
    out = labels.copy()
    for value, count in zip(values, counts):
        if value != dominant and count * n_frames < min_patches:
            out[labels == value] = dominant
    return out


def build_cluster_map(patch_stack, cluster_cfg: TrainConfig, scale: float = 1.0):
    """Train the clustering RBM on one scale and vote a cluster map.

    Args:
        patch_stack: array (N, N_h, N_w, D) of patches from N training frames.
        cluster_cfg: training settings of the small RBM; ``n_hidden`` is the
            number of label bits. Clusters with fewer than
            ``2 * batch_size`` training patches are merged away.
        scale: recorded on the returned map.

    Returns:
        (small_rbm, ClusterMap)
    """
    patch_stack = np.asarray(patch_stack, dtype=np.float64)
    if patch_stack.ndim != 4 or patch_stack.shape[0] == 0:
        raise ValueError("expected a non-empty (N, N_h, N_w, D) patch stack")
    n, n_h, n_w, d = patch_stack.shape
    pooled = patch_stack.reshape(-1, d)
    small = train(pooled, cluster_cfg)
    pl = pseudo_label(pooled, small).reshape(n, n_h, n_w)
    labels = vote_grid(pl, 2 ** small.n_hidden)
    labels = merge_small_clusters(labels, n, 2 * cluster_cfg.batch_size)
    return small, ClusterMap(scale, labels)


def kmeans(points, k: int, seed: int = 0, max_iter: int = 100):
    """Lloyd's algorithm from ``k`` distinct random data points.

    Returns:
        (labels, centroids)
    """
    x = np.asarray(points, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be positive")
    distinct = np.unique(x, axis=0)
    if k > distinct.shape[0]:
        raise ValueError(f"k={k} exceeds the {distinct.shape[0]} distinct samples")
    rng = np.random.default_rng(seed)
    centroids = distinct[np.sort(rng.choice(distinct.shape[0], size=k, replace=False))]
    labels = None
    sq_norms = np.sum(x ** 2, axis=1)
    for _ in range(max_iter):
        dist = sq_norms[:, None] - 2 * x @ centroids.T + np.sum(centroids ** 2, axis=1)
        new = np.argmin(dist, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            members = x[labels == c]
            # empty clusters keep their previous centroid
            if len(members):
                centroids[c] = members.mean(axis=0)
    return labels, centroids


def kmeans_baseline(patch_stack, k: int = 8, seed: int = 0, scale: float = 1.0) -> ClusterMap:
    """k-means over pooled patches, then per-location voting."""
    patch_stack = np.asarray(patch_stack, dtype=np.float64)
    n, n_h, n_w, d = patch_stack.shape
    labels, _ = kmeans(patch_stack.reshape(-1, d), k, seed)
    return ClusterMap(scale, vote_grid(labels.reshape(n, n_h, n_w), k))

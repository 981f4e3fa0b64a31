"""Frame-level, pixel-level and dual-pixel ROC evaluation.

Frame level ranks frames by their maximum fused error. Pixel level re-runs
thresholding and component filtering at a sweep of thresholds: an
anomalous frame is a true positive when the detection covers at least 40%
of its ground-truth pixels, a normal frame is a false positive when
anything at all is detected in it. Dual-pixel additionally asks that at
least a fraction ``alpha`` of the detected pixels be truly anomalous.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .detector import filter_indicator

COVERAGE = 0.4


@dataclass
class RocCurve:
    """ROC points ordered by decreasing threshold."""

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def frame_score(score_map) -> float:
    return float(np.max(score_map))


def auc_trapezoid(curve: RocCurve) -> float:
    return float(np.sum(np.diff(curve.fpr) * (curve.tpr[1:] + curve.tpr[:-1]) / 2.0))


def equal_error_rate(curve: RocCurve) -> float:
    """False-positive rate where it meets the miss rate, linearly
    interpolated between the two bracketing ROC points."""
    gap = curve.fpr + curve.tpr - 1.0
    above = np.flatnonzero(gap >= 0)
    if above.size == 0:
        raise ValueError("ROC curve never reaches the equal-error line")
    k = int(above[0])
    if gap[k] == 0 or k == 0:
        return float(curve.fpr[k])
    s = -gap[k - 1] / (gap[k] - gap[k - 1])
    return float(curve.fpr[k - 1] + s * (curve.fpr[k] - curve.fpr[k - 1]))


def _check_labels(labels) -> np.ndarray:
    labels = np.asarray(labels).astype(bool)
    if labels.all() or not labels.any():
        raise ValueError("evaluation needs both normal and anomalous items")
    return labels


def roc_auc_eer(scores, labels):
    """ROC over every distinct score (equal scores flip together).

    Returns:
        (RocCurve, auc, eer)
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_labels(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    last_of_group = np.flatnonzero(np.r_[np.diff(s) != 0, True])
    tp = np.cumsum(y)[last_of_group]
    fp = np.cumsum(~y)[last_of_group]
    curve = RocCurve(
        np.r_[0.0, fp / (~labels).sum()],
        np.r_[0.0, tp / labels.sum()],
        np.r_[np.inf, s[last_of_group]],
    )
    return curve, auc_trapezoid(curve), equal_error_rate(curve)


def frame_level_eval(frame_scores, labels):
    frame_scores = np.asarray(frame_scores, dtype=np.float64)
    if frame_scores.ndim > 1:
        frame_scores = frame_scores.reshape(frame_scores.shape[0], -1).max(axis=1)
    if frame_scores.shape[0] != np.asarray(labels).shape[0]:
        raise ValueError("frame scores and labels differ in length")
    return roc_auc_eer(frame_scores, labels)


def pixel_true_positives(detection, masks, alpha: float = 0.0) -> np.ndarray:
    """Per-frame localisation hits for (N, H, W) detection and mask stacks."""
    d = np.asarray(detection, dtype=bool).reshape(len(detection), -1)
    g = np.asarray(masks, dtype=bool).reshape(len(masks), -1)
    overlap = (d & g).sum(axis=1)
    truth = g.sum(axis=1)
    detected = d.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        coverage = np.where(truth > 0, overlap / truth, 0.0)
        precision = np.where(detected > 0, overlap / detected, 0.0)
    return (truth > 0) & (coverage >= COVERAGE) & (precision >= alpha)


def _localisation_curve(detections, masks, alpha: float, close: bool) -> RocCurve:
    if masks is None:
        raise ValueError("pixel-level evaluation needs ground-truth masks")
    masks = np.asarray(masks, dtype=bool)
    anomalous = _check_labels(masks.reshape(len(masks), -1).any(axis=1))
    fpr, tpr, thr = [0.0], [0.0], [np.inf]
    for threshold, z in sorted(detections, key=lambda item: -item[0]):
        z = np.asarray(z, dtype=bool)
        if z.shape != masks.shape:
            raise ValueError(f"detection shape {z.shape} does not match masks {masks.shape}")
        hits = pixel_true_positives(z, masks, alpha)
        alarms = z.reshape(len(z), -1).any(axis=1)
        tpr.append(hits[anomalous].mean())
        fpr.append(alarms[~anomalous].mean())
        thr.append(threshold)
    if close and (fpr[-1], tpr[-1]) != (1.0, 1.0):
        fpr.append(1.0)
        tpr.append(1.0)
        thr.append(-np.inf)
    return RocCurve(np.array(fpr), np.array(tpr), np.array(thr, dtype=np.float64))


def pixel_level_eval(detections, masks):
    """``detections`` is an iterable of (threshold, (N, H, W) bool array).

    Returns:
        (RocCurve, auc, eer)
    """
    curve = _localisation_curve(detections, masks, 0.0, close=True)
    return curve, auc_trapezoid(curve), equal_error_rate(curve)


def dual_pixel_eval(detections, masks, alpha: float = 0.05):
    """Like ``pixel_level_eval`` plus the precision rule; the curve is not
    extended to (1, 1) and no EER is reported.

    Returns:
        (RocCurve, auc)
    """
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    curve = _localisation_curve(detections, masks, alpha, close=False)
    return curve, auc_trapezoid(curve)


def sweep_thresholds(errors, n: int = 100) -> np.ndarray:
    """Candidate thresholds from quantiles of frame maxima and of all
    voxels, in decreasing order."""
    errors = np.asarray(errors, dtype=np.float64)
    q = np.linspace(0.0, 1.0, n)
    frame_max = errors.reshape(errors.shape[0], -1).max(axis=1)
    cand = np.unique(np.r_[np.quantile(frame_max, q), np.quantile(errors, q)])
    return cand[::-1]


def sweep_detections(errors, thresholds, chunk_length: int, gamma: int):
    """Yield (threshold, filtered indicator) with chunked component
    filtering re-applied at every threshold."""
    errors = np.asarray(errors, dtype=np.float64)
    for threshold in thresholds:
        z = np.empty(errors.shape, dtype=bool)
        for start in range(0, errors.shape[0], chunk_length):
            sl = slice(start, start + chunk_length)
            z[sl] = filter_indicator(errors[sl] >= threshold, gamma)
        yield float(threshold), z


def write_roc_csv(path, curve: RocCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "fpr", "tpr"])
        for t, f, p in zip(curve.thresholds, curve.fpr, curve.tpr):
            w.writerow([repr(float(t)), repr(float(f)), repr(float(p))])


def write_metrics_csv(path, rows) -> None:
    """``rows`` are (level, auc, eer-or-None)."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "auc", "eer"])
        for level, auc, eer in rows:
            w.writerow([level, repr(float(auc)), "" if eer is None else repr(float(eer))])

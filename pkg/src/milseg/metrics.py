"""Segmentation metrics over sets of (predicted, ground-truth) label masks.

Counts aggregate across the whole evaluation set before any division, so
every metric is invariant to image order and to how pixels are split
across images.  Two views of quality:

  per-class accuracy   correct_k / gt_count_k for each class with ground
                       truth, mean over those classes;
  AP (per-pixel IoU)   TP / (TP + FP + FN) per class, mAP the unweighted
                       mean over applicable classes, background included.

A class absent from both prediction and ground truth has an undefined AP
and is excluded from mAP rather than scored.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .inference import ThresholdSet, smooth_proposals


def _check_pairs(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray]) -> None:
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions vs {len(gts)} ground-truth masks")
    if len(preds) == 0:
        raise ValueError("empty evaluation set")
    for i, (p, g) in enumerate(zip(preds, gts)):
        if p.shape != g.shape:
            raise ValueError(f"pair {i}: prediction {p.shape} vs ground truth {g.shape}")
        if p.ndim != 2:
            raise ValueError(f"pair {i}: masks must be 2-d, got {p.ndim}-d")


def confusion_counts(
    preds: Sequence[np.ndarray], gts: Sequence[np.ndarray], num_classes: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Set-aggregated (tp, fp, fn) pixel counts per class."""
    _check_pairs(preds, gts)
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p, g in zip(preds, gts):
        pf = p.ravel().astype(np.int64)
        gf = g.ravel().astype(np.int64)
        if pf.min() < 0 or pf.max() >= num_classes or gf.min() < 0 or gf.max() >= num_classes:
            raise ValueError(f"class index outside [0, {num_classes})")
        matrix += np.bincount(pf * num_classes + gf, minlength=num_classes**2).reshape(
            num_classes, num_classes
        )
    tp = np.diag(matrix).copy()
    fp = matrix.sum(axis=1) - tp
    fn = matrix.sum(axis=0) - tp
    return tp, fp, fn


def _num_classes(preds, gts) -> int:
    return int(max(max(p.max() for p in preds), max(g.max() for g in gts))) + 1


def per_class_accuracy(
    preds: Sequence[np.ndarray], gts: Sequence[np.ndarray]
) -> tuple[dict[int, float], float]:
    """Ratios for every class with at least one ground-truth pixel, and the
    mean over exactly those classes."""
    _check_pairs(preds, gts)
    tp, _, fn = confusion_counts(preds, gts, _num_classes(preds, gts))
    gt_counts = tp + fn
    ratios = {k: tp[k] / gt_counts[k] for k in range(len(tp)) if gt_counts[k] > 0}
    return ratios, float(np.mean(list(ratios.values())))


def voc_ap(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray], k: int) -> float | None:
    """TP/(TP+FP+FN) for class k over the whole set; None when the class is
    absent from both predictions and ground truth (not applicable)."""
    _check_pairs(preds, gts)
    n = max(_num_classes(preds, gts), k + 1)
    tp, fp, fn = confusion_counts(preds, gts, n)
    denom = tp[k] + fp[k] + fn[k]
    if denom == 0:
        return None
    return float(tp[k] / denom)


def mean_ap(
    preds: Sequence[np.ndarray], gts: Sequence[np.ndarray], classes: Sequence[int] | None = None
) -> float:
    """Unweighted mean AP over the applicable classes (background included)."""
    _check_pairs(preds, gts)
    if classes is None:
        classes = range(_num_classes(preds, gts))
    values = [voc_ap(preds, gts, k) for k in classes]
    applicable = [v for v in values if v is not None]
    if not applicable:
        raise ValueError("no class is present in either predictions or ground truth")
    return float(np.mean(applicable))


def metrics_report(
    preds: Sequence[np.ndarray],
    gts: Sequence[np.ndarray],
    thresholds: ThresholdSet | None = None,
) -> dict:
    """The JSON report shape used by the command-line surface."""
    ratios, _ = per_class_accuracy(preds, gts)
    n = _num_classes(preds, gts)
    ap = {k: voc_ap(preds, gts, k) for k in range(n)}
    report = {
        "per_class_accuracy": {str(k): v for k, v in ratios.items()},
        "ap": {str(k): v for k, v in ap.items() if v is not None},
        "mAP": mean_ap(preds, gts),
    }
    if thresholds is not None:
        report["thresholds"] = {str(k + 1): v for k, v in enumerate(thresholds.values)}
    return report


def grid_search_thresholds(
    weighted_list: Sequence[np.ndarray],
    obj_list: Sequence[np.ndarray],
    gts: Sequence[np.ndarray],
    grid: Sequence[float],
    num_foreground: int,
) -> ThresholdSet:
    """Coordinate sweep over per-class confidence floors.

    Inputs are the precomputed post-ILP weighted maps and objectness maps of
    the validation images.  Classes are swept in index order; each sweep picks
    the candidate maximizing that class's AP with the other classes held at
    their current values, ties toward the smaller candidate.  Every class's
    AP depends only on its own floor, so one pass is exact.
    """
    if len(grid) == 0:
        raise ValueError("empty threshold grid")
    if len(weighted_list) == 0:
        raise ValueError("empty validation set")
    if not (len(weighted_list) == len(obj_list) == len(gts)):
        raise ValueError("weighted maps, objectness maps, and ground truth differ in length")
    candidates = sorted(set(float(g) for g in grid))
    for g in candidates:
        if not 0.0 <= g < 1.0:
            raise ValueError(f"grid value {g} outside [0, 1)")
    current = [candidates[0]] * num_foreground
    for k in range(1, num_foreground + 1):
        best_delta, best_ap = candidates[0], -2.0  # any candidate beats the sentinel
        for cand in candidates:
            trial = current.copy()
            trial[k - 1] = cand
            ts = ThresholdSet(values=tuple(trial))
            preds = [
                smooth_proposals(wm, ob, ts) for wm, ob in zip(weighted_list, obj_list)
            ]
            ap = voc_ap(preds, gts, k)
            score = -1.0 if ap is None else ap
            if score > best_ap:
                best_ap, best_delta = score, cand
        current[k - 1] = best_delta
    return ThresholdSet(values=tuple(current))

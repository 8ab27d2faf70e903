"""Precision-recall / ROC curves, adaptive-threshold F-measure and VOC overlap."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

BETA2 = 0.3
THRESHOLDS = np.arange(256)


class DegenerateGroundTruth(ValueError):
    pass


@dataclass(frozen=True)
class EvalCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray

    def rows(self):
        return zip(self.thresholds, self.precision, self.recall, self.tpr, self.fpr)


@dataclass(frozen=True)
class Confusion:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray


@dataclass(frozen=True)
class AdaptiveResult:
    f_measure: float
    precision: float
    recall: float
    voc_overlap: float
    threshold: float


def binarize(smap, threshold) -> np.ndarray:
    return np.asarray(smap) > threshold


def _check_gt(gt: np.ndarray, shape) -> np.ndarray:
    gt = np.asarray(gt, dtype=bool)
    if gt.shape != tuple(shape):
        raise ValueError(f"ground truth {gt.shape} does not match map {tuple(shape)}")
    if gt.all() or not gt.any():
        raise DegenerateGroundTruth("ground truth needs both foreground and background pixels")
    return gt


def confusion_counts(smap, gt, thresholds=THRESHOLDS) -> Confusion:
    """TP/FP/FN/TN for every threshold via a 256-bin histogram of the map."""
    smap = np.asarray(smap, dtype=np.float64)
    gt = np.asarray(gt, dtype=bool)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    fg = np.sort(smap[gt])
    bg = np.sort(smap[~gt])
    # number of values strictly above each threshold
    tp = fg.size - np.searchsorted(fg, thresholds, side="right")
    fp = bg.size - np.searchsorted(bg, thresholds, side="right")
    return Confusion(tp, fp, fg.size - tp, bg.size - fp)


def _precision(tp, fp):
    tp = np.asarray(tp, dtype=np.float64)
    denom = tp + fp
    return np.divide(tp, denom, out=np.ones_like(tp), where=denom > 0)


def pr_roc_curves(smap, gt) -> EvalCurve:
    smap = np.asarray(smap, dtype=np.float64)
    gt = _check_gt(gt, smap.shape)
    c = confusion_counts(smap, gt)
    recall = c.tp / (c.tp + c.fn)
    fpr = c.fp / (c.fp + c.tn)
    return EvalCurve(THRESHOLDS.copy(), _precision(c.tp, c.fp), recall, recall.copy(), fpr)


def f_beta(precision: float, recall: float, beta2: float = BETA2) -> float:
    denom = beta2 * precision + recall
    if denom == 0:
        return 0.0
    return (beta2 + 1.0) * precision * recall / denom


def adaptive_threshold(smap) -> float:
    return float(min(2.0 * np.mean(smap), 255.0))


def voc_overlap(s_prime, gt) -> float:
    a = np.asarray(s_prime, dtype=bool)
    b = np.asarray(gt, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("mask sizes differ")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def adaptive_metrics(smap, gt, beta2: float = BETA2) -> AdaptiveResult:
    """F-measure and VOC overlap at twice the mean saliency."""
    smap = np.asarray(smap, dtype=np.float64)
    gt = _check_gt(gt, smap.shape)
    t = adaptive_threshold(smap)
    pred = binarize(smap, t)
    tp = np.count_nonzero(pred & gt)
    fp = np.count_nonzero(pred & ~gt)
    p = float(_precision(tp, fp))
    r = tp / np.count_nonzero(gt)
    return AdaptiveResult(f_beta(p, r, beta2), p, float(r), voc_overlap(pred, gt), t)


def f_measure(smap, gt, beta2: float = BETA2) -> tuple[float, float]:
    res = adaptive_metrics(smap, gt, beta2)
    return res.f_measure, res.threshold


def average_curves(curves: list[EvalCurve]) -> EvalCurve:
    """Dataset curve as the per-threshold mean of per-image rates."""
    if not curves:
        raise ValueError("no curves to average")
    stack = {k: np.mean([getattr(c, k) for c in curves], axis=0)
             for k in ("precision", "recall", "tpr", "fpr")}
    return EvalCurve(THRESHOLDS.copy(), **stack)


def pooled_curve(counts: list[Confusion]) -> EvalCurve:
    """Dataset curve from confusion counts summed over images."""
    if not counts:
        raise ValueError("no counts to pool")
    tp = sum(c.tp for c in counts)
    fp = sum(c.fp for c in counts)
    fn = sum(c.fn for c in counts)
    tn = sum(c.tn for c in counts)
    recall = tp / (tp + fn)
    return EvalCurve(THRESHOLDS.copy(), _precision(tp, fp), recall, recall.copy(), fp / (fp + tn))


def write_curve_csv(path, curve: EvalCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "precision", "recall", "tpr", "fpr"])
        for t, p, r, tpr, fpr in curve.rows():
            w.writerow([int(t), f"{p:.6f}", f"{r:.6f}", f"{tpr:.6f}", f"{fpr:.6f}"])


def mean_pm_std(values) -> str:
    """``mean±std`` with two decimals, population standard deviation."""
    v = np.asarray(values, dtype=np.float64)
    return f"{v.mean():.2f}±{v.std():.2f}"

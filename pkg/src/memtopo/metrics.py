"""Classification/segmentation metrics, ROC/PR curves, and histogram
mode detection.

Rates use a zero-denominator convention of 0.0 with a ``degenerate`` flag
(instead of NaN) so CSV reports stay clean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DimensionError


class Rate(float):
    """A float that knows whether its denominator was zero."""

    degenerate: bool

    def __new__(cls, value: float, degenerate: bool = False):
        out = super().__new__(cls, value)
        out.degenerate = degenerate
        return out


def _rate(num: float, den: float) -> Rate:
    if den == 0:
        return Rate(0.0, degenerate=True)
    return Rate(num / den)


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(pred: np.ndarray, truth: np.ndarray) -> ConfusionCounts:
    """Exact binary confusion counts from 0/1 vectors of equal length."""
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise DimensionError(
            f"length mismatch: pred {pred.shape} vs truth {truth.shape}")
    return ConfusionCounts(
        tp=int(np.sum(pred & truth)),
        fp=int(np.sum(pred & ~truth)),
        tn=int(np.sum(~pred & ~truth)),
        fn=int(np.sum(~pred & truth)),
    )


def tpr_recall(c: ConfusionCounts) -> Rate:
    return _rate(c.tp, c.tp + c.fn)


def fpr(c: ConfusionCounts) -> Rate:
    return _rate(c.fp, c.tn + c.fp)


def precision(c: ConfusionCounts) -> Rate:
    return _rate(c.tp, c.tp + c.fp)


def f1(c: ConfusionCounts) -> Rate:
    p = precision(c)
    r = tpr_recall(c)
    if p + r == 0:
        return Rate(0.0, degenerate=True)
    return Rate(2.0 * p * r / (p + r), degenerate=p.degenerate or r.degenerate)


def accuracy(c: ConfusionCounts) -> Rate:
    return _rate(c.tp + c.tn, c.total)


def confusion_matrix(pred: np.ndarray, truth: np.ndarray,
                     classes: int) -> np.ndarray:
    """Multiclass (classes x classes) count matrix, rows = truth."""
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise DimensionError("prediction/truth length mismatch")
    out = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(out, (truth, pred), 1)
    return out


@dataclass
class CurveReport:
    roc: list[tuple[float, float, float]]  # (threshold, fpr, tpr)
    pr: list[tuple[float, float, float]]   # (threshold, recall, precision)
    auc_roc: float
    auc_pr: float


def roc_pr_curves(probabilities: np.ndarray, truth: np.ndarray) -> CurveReport:
    """Full threshold sweep over the distinct scores, trapezoidal AUC.

    A prediction is positive when score >= threshold; points are ordered by
    threshold descending. The ROC is anchored at (0, 0) (threshold +inf) and
    the PR at recall 0 with precision 1.
    """
    p = np.asarray(probabilities, dtype=np.float64)
    t = np.asarray(truth).astype(bool)
    if p.size == 0:
        raise ArgumentError("empty input")
    if p.shape != t.shape:
        raise DimensionError("score/truth length mismatch")
    if np.any(p < 0) or np.any(p > 1):
        raise ArgumentError("probabilities must lie in [0, 1]")

    order = np.argsort(-p, kind="stable")
    scores = p[order]
    labels = t[order].astype(np.int64)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos

    tp_cum = np.cumsum(labels)
    fp_cum = np.cumsum(1 - labels)
    # last index of each distinct score = counts with threshold at that score
    distinct = np.nonzero(np.diff(scores))[0]
    idx = np.concatenate([distinct, [scores.size - 1]])

    roc = [(float("inf"), 0.0, 0.0)]
    pr = [(float("inf"), 0.0, 1.0)]
    for i in idx:
        thr = float(scores[i])
        tp = int(tp_cum[i])
        fpc = int(fp_cum[i])
        tpr_v = tp / n_pos if n_pos else 0.0
        fpr_v = fpc / n_neg if n_neg else 0.0
        prec = tp / (tp + fpc) if (tp + fpc) else 0.0
        roc.append((thr, fpr_v, tpr_v))
        pr.append((thr, tpr_v, prec))

    auc_roc = float(np.trapezoid([pt[2] for pt in roc], [pt[1] for pt in roc]))
    auc_pr = float(np.trapezoid([pt[2] for pt in pr], [pt[1] for pt in pr]))
    return CurveReport(roc=roc, pr=pr, auc_roc=auc_roc, auc_pr=auc_pr)


def export_curve_csv(points, path) -> None:
    """CSV rows (threshold, x, y) in sweep order."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("threshold,x,y\n")
        for thr, x, y in points:
            fh.write(f"{thr:.6g},{x:.6g},{y:.6g}\n")


def histogram(values: np.ndarray, bins: int,
              value_range: tuple[float, float] | None = None):
    """Counts plus bin edges; thin wrapper kept for a stable CSV format."""
    if bins < 1:
        raise ArgumentError("bins must be >= 1")
    counts, edges = np.histogram(np.asarray(values).ravel(), bins=bins,
                                 range=value_range)
    return counts, edges


def export_histogram_csv(counts: np.ndarray, edges: np.ndarray, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("bin_lo,bin_hi,count\n")
        for i, c in enumerate(counts):
            fh.write(f"{edges[i]:.6g},{edges[i + 1]:.6g},{int(c)}\n")


def find_modes(values: np.ndarray, bins: int = 101,
               value_range: tuple[float, float] | None = None,
               min_fraction: float = 0.02,
               window: int = 3) -> list[float]:
    """Simple peak scan over a histogram.

    A bin is a mode when it holds at least ``min_fraction`` of the tallest
    bin and is a local maximum within +-window bins (leftmost wins on
    plateaus). Returns the mode bin centers, ascending.
    """
    counts, edges = histogram(values, bins, value_range)
    centers = 0.5 * (edges[:-1] + edges[1:])
    if counts.max() == 0:
        return []
    floor = counts.max() * min_fraction
    modes = []
    for i, c in enumerate(counts):
        if c < floor or c == 0:
            continue
        left = counts[max(0, i - window):i]
        right = counts[i + 1:i + 1 + window]
        if (left.size == 0 or np.all(left < c)) and \
           (right.size == 0 or np.all(right <= c)):
            modes.append(float(centers[i]))
    return modes

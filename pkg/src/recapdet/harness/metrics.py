"""Binary detection metrics with the recaptured class as the positive class."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from recapdet.data import RECAPTURED


@dataclass
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float | None
    roc_points: list = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def f1_score(precision: float, recall: float) -> float:
    return _ratio(2 * precision * recall, precision + recall)


def from_confusion(tp: int, fp: int, tn: int, fn: int, auc=None, roc_points=None) -> MetricsReport:
    """Derived metrics; an empty denominator yields 0."""
    p = _ratio(tp, tp + fp)
    r = _ratio(tp, tp + fn)
    return MetricsReport(tp, fp, tn, fn, _ratio(tp + tn, tp + fp + tn + fn), p, r, f1_score(p, r),
                         auc, list(roc_points or []))


def roc_curve(scores, positive) -> list:
    """(fpr, tpr, threshold) points, one per distinct score plus the (0, 0) start.

    A sample is called positive when its score is >= the threshold. Tied
    scores move both rates in one diagonal step.
    """
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positive, dtype=bool)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        return []
    order = np.argsort(-s, kind="stable")
    s, pos = s[order], pos[order]
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tps = np.cumsum(pos)[last]
    fps = (last + 1) - tps
    points = [(0.0, 0.0, float("inf"))]
    points += [(fps[i] / n_neg, tps[i] / n_pos, float(s[last[i]])) for i in range(len(last))]
    return [(float(a), float(b), t) for a, b, t in points]


def auc_trapezoid(points) -> float:
    if not points:
        raise ValueError("ROC is empty")
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))


def auc_pairs(scores, positive) -> float:
    """Fraction of (positive, negative) pairs ranked correctly, ties counted half."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positive, dtype=bool)
    a, b = s[pos][:, None], s[~pos][None, :]
    return float(((a > b).sum() + 0.5 * (a == b).sum()) / (a.size * b.size))


def compute_metrics(scores, labels, threshold: float = 0.5, positive_class: int = RECAPTURED) -> MetricsReport:
    """Metrics from recaptured-class scores; AUC is None if only one class is present."""
    s = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if len(s) == 0 or len(s) != len(labels):
        raise ValueError(f"need matching non-empty scores and labels, got {len(s)} and {len(labels)}")
    truth = labels == positive_class
    pred = s >= threshold
    tp = int((pred & truth).sum())
    fp = int((pred & ~truth).sum())
    tn = int((~pred & ~truth).sum())
    fn = int((~pred & truth).sum())
    roc = roc_curve(s, truth)
    auc = auc_trapezoid(roc) if roc else None
    return from_confusion(tp, fp, tn, fn, auc, roc)

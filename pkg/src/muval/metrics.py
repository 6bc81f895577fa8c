"""Classification metrics with R0 (label 1) as the positive class."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from muval.errors import ContractError

THRESHOLD = 0.5


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.size == 0 or pred.shape != truth.shape:
        raise ContractError("predictions and truth must be equal-length and non-empty")
    return pred, truth


def accuracy(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean(pred == truth))


def confusion(pred, truth, positive: int = 1) -> dict[str, int]:
    pred, truth = _pair(pred, truth)
    p, t = pred == positive, truth == positive
    return {"tp": int(np.sum(p & t)), "fp": int(np.sum(p & ~t)),
            "tn": int(np.sum(~p & ~t)), "fn": int(np.sum(~p & t))}


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2 * tp / denom


def f1(pred, truth, positive: int = 1) -> float:
    c = confusion(pred, truth, positive)
    return f1_from_counts(c["tp"], c["fp"], c["fn"])


def roc_curve(scores, truth) -> list[tuple[float, float]]:
    """(FPR, TPR) points sweeping a threshold down through every distinct score."""
    scores, truth = np.asarray(scores, dtype=np.float64), np.asarray(truth)
    if scores.size == 0 or scores.shape != truth.shape:
        raise ContractError("scores and truth must be equal-length and non-empty")
    n_pos, n_neg = int(np.sum(truth == 1)), int(np.sum(truth == 0))
    if n_pos == 0 or n_neg == 0:
        raise ContractError("ROC needs both classes present")
    points = [(0.0, 0.0)]
    tp = fp = 0
    for thr in np.unique(scores)[::-1]:
        at = scores == thr
        tp += int(np.sum(at & (truth == 1)))
        fp += int(np.sum(at & (truth == 0)))
        points.append((fp / n_neg, tp / n_pos))
    return points


def trapezoid_auc(points) -> float:
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def pairwise_auc(scores, truth) -> float:
    """Fraction of (positive, negative) pairs ranked correctly, ties counted half."""
    scores, truth = np.asarray(scores, dtype=np.float64), np.asarray(truth)
    pos, neg = scores[truth == 1], scores[truth == 0]
    if pos.size == 0 or neg.size == 0:
        raise ContractError("AUC needs both classes present")
    diff = pos[:, None] - neg[None, :]
    return float((np.sum(diff > 0) + 0.5 * np.sum(diff == 0)) / (pos.size * neg.size))


def roc_auc(scores, truth) -> tuple[list[tuple[float, float]], float]:
    points = roc_curve(scores, truth)
    return points, trapezoid_auc(points)


@dataclass
class MetricsReport:
    accuracy: float
    f1: float
    auc: float
    roc: list[tuple[float, float]] = field(default_factory=list)
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def roc_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fpr", "tpr"])
            w.writerows([repr(x), repr(y)] for x, y in self.roc)


def evaluate(scores, truth, threshold: float = THRESHOLD) -> MetricsReport:
    """ACC/F1 at ``threshold`` on the R0 probability plus the ROC curve and AUC."""
    scores, truth = np.asarray(scores, dtype=np.float64), np.asarray(truth, dtype=int)
    pred = (scores >= threshold).astype(int)
    points, auc = roc_auc(scores, truth)
    c = confusion(pred, truth)
    return MetricsReport(accuracy(pred, truth), f1_from_counts(c["tp"], c["fp"], c["fn"]), auc,
                         [(float(x), float(y)) for x, y in points], **c)

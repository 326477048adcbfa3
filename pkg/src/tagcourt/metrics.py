"""Ranking metrics for anomaly scores: ROC-AUC, average precision, ROC curve.

AUC uses the rank-sum (Mann-Whitney) formulation with midranks for ties;
average precision breaks score ties by ascending node id so results are
deterministic.
"""

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np


class SingleClassError(ValueError):
    """Raised when a metric needs both positives and negatives."""


@dataclass
class MetricsReport:
    auc: float
    ap: float
    n_pos: int
    n_neg: int

    def to_dict(self) -> Dict:
        return {"auc": self.auc, "ap": self.ap, "n_pos": self.n_pos, "n_neg": self.n_neg}


def _check_inputs(scores, labels) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D arrays of equal length")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    return scores, labels


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing the average of their ranks."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def roc_auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative (ties count 1/2)."""
    scores, labels = _check_inputs(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("roc_auc needs at least one positive and one negative")
    ranks = _midranks(scores)
    rank_sum = ranks[labels == 1].sum()
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def average_precision(scores, labels, node_ids=None) -> float:
    """Mean precision at the rank of each positive, sorting by (score desc, id asc)."""
    scores, labels = _check_inputs(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise SingleClassError("average_precision needs at least one positive")
    if node_ids is None:
        node_ids = np.arange(len(scores))
    order = sorted(range(len(scores)), key=lambda k: (-scores[k], node_ids[k]))
    hits = 0
    total = 0.0
    for rank, k in enumerate(order, start=1):
        if labels[k] == 1:
            hits += 1
            total += hits / rank
    return total / n_pos


def roc_curve(scores, labels) -> List[Tuple[float, float]]:
    """(FPR, TPR) points from (0,0) to (1,1), thresholds descending over unique scores."""
    scores, labels = _check_inputs(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("roc_curve needs at least one positive and one negative")
    order = np.argsort(-scores, kind="mergesort")
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        for k in order[i : j + 1]:
            if labels[k] == 1:
                tp += 1
            else:
                fp += 1
        points.append((fp / n_neg, tp / n_pos))
        i = j + 1
    return points


def trapezoid_area(points: List[Tuple[float, float]]) -> float:
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def compute_metrics(scores, labels) -> MetricsReport:
    scores, labels = _check_inputs(scores, labels)
    n_pos = int(labels.sum())
    return MetricsReport(
        auc=roc_auc(scores, labels),
        ap=average_precision(scores, labels),
        n_pos=n_pos,
        n_neg=len(labels) - n_pos,
    )

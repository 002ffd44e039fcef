"""Binary-classification metrics: confusion counts, P/R/F1, accuracy, AUC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MetricError
from .tensor import no_grad


@dataclass
class MetricsReport:
    accuracy: float
    auc: float
    f1: float
    precision: float
    recall: float
    tp: int
    fp: int
    tn: int
    fn: int

    def line(self) -> str:
        return (
            f"acc={self.accuracy:.6f} auc={self.auc:.6f} f1={self.f1:.6f} "
            f"p={self.precision:.6f} r={self.recall:.6f}"
        )


def confusion(scores, labels, threshold: float = 0.5):
    """Counts (tp, fp, tn, fn) with predictions of score >= threshold."""
    tp = fp = tn = fn = 0
    for s, y in zip(scores, labels):
        pred = 1 if s >= threshold else 0
        if pred == 1 and y == 1:
            tp += 1
        elif pred == 1 and y == 0:
            fp += 1
        elif pred == 0 and y == 0:
            tn += 1
        else:
            fn += 1
    return tp, fp, tn, fn


def precision_score(tp: int, fp: int) -> float:
    return tp / (tp + fp) if tp + fp else 0.0


def recall_score(tp: int, fn: int) -> float:
    return tp / (tp + fn) if tp + fn else 0.0


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


def auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative.

    Rank-based Mann-Whitney statistic; tied scores contribute one half.
    Undefined (raises) when only one class is present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError(f"auc undefined: {n_pos} positives and {n_neg} negatives")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    rank_sum = ranks[labels == 1].sum()
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def report_from_scores(scores, labels, threshold: float = 0.5) -> MetricsReport:
    tp, fp, tn, fn = confusion(scores, labels, threshold)
    p = precision_score(tp, fp)
    r = recall_score(tp, fn)
    total = tp + fp + tn + fn
    return MetricsReport(
        accuracy=(tp + tn) / total if total else 0.0,
        auc=auc(scores, labels),
        f1=f1_score(p, r),
        precision=p,
        recall=r,
        tp=tp, fp=fp, tn=tn, fn=fn,
    )


def evaluate(model, samples, threshold: float = 0.5, batch_size: int = 32) -> MetricsReport:
    """Deterministic eval-mode pass over a dataset."""
    scores = []
    labels = []
    with no_grad():
        for start in range(0, len(samples), batch_size):
            batch = samples[start : start + batch_size]
            p, _ = model.forward_batch(batch, train=False)
            scores.extend(float(v) for v in p.data)
            labels.extend(s.label for s in batch)
    return report_from_scores(scores, labels, threshold)

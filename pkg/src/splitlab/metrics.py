"""Binary classification metrics: AUROC, AUPRC, F1, Cohen's kappa.

AUROC is the rank (Mann-Whitney) statistic with half credit for ties, which
equals trapezoidal integration of the ROC curve. AUPRC uses step
interpolation (precision at each recall step), the pessimistic convention.
The test suite holds both against O(N^2) brute-force oracles.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import UndefinedMetricError, ValidationError


class KappaDegenerateWarning(UserWarning):
    """Expected agreement is 1, so kappa is undefined; 0 is reported."""


@dataclass
class ScoredPredictions:
    scores: np.ndarray
    labels: np.ndarray
    threshold: float = 0.5

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).ravel()
        self.labels = np.asarray(self.labels, dtype=np.float64).ravel()
        if self.scores.shape != self.labels.shape:
            raise ValidationError("scores and labels must have equal length")
        if self.scores.size < 1:
            raise ValidationError("need at least one sample")
        if np.any((self.scores < 0.0) | (self.scores > 1.0)):
            raise ValidationError("scores must lie in [0, 1]")
        if not np.all((self.labels == 0.0) | (self.labels == 1.0)):
            raise ValidationError("labels must be 0 or 1")


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their group."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auroc(preds: ScoredPredictions) -> float:
    """Probability a random positive outscores a random negative (ties: 1/2)."""
    pos = preds.labels == 1.0
    n_pos = int(pos.sum())
    n_neg = preds.labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("auroc needs both classes present")
    ranks = _midranks(preds.scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auprc(preds: ScoredPredictions) -> float:
    """Area under precision-recall via step interpolation.

    Scores are swept from high to low; tied scores form a single threshold
    step, contributing (recall gain) * (precision at that step).
    """
    n_pos = int((preds.labels == 1.0).sum())
    if n_pos == 0:
        raise UndefinedMetricError("auprc needs at least one positive")
    order = np.argsort(-preds.scores, kind="stable")
    scores = preds.scores[order]
    labels = preds.labels[order]
    weighted_precision = 0.0
    tp = fp = 0
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and scores[j + 1] == scores[i]:
            j += 1
        group_tp = int(labels[i : j + 1].sum())
        tp += group_tp
        fp += (j - i + 1) - group_tp
        if group_tp:
            weighted_precision += group_tp * (tp / (tp + fp))
        i = j + 1
    return float(weighted_precision / n_pos)


def confusion(preds: ScoredPredictions) -> tuple[int, int, int, int]:
    """(TP, FP, FN, TN) with predicted-positive meaning score >= threshold."""
    predicted = preds.scores >= preds.threshold
    actual = preds.labels == 1.0
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    tn = int(np.sum(~predicted & ~actual))
    return tp, fp, fn, tn


def f1_and_kappa(preds: ScoredPredictions) -> tuple[float, float]:
    """F1 and Cohen's kappa of the thresholded predictions.

    Kappa uses marginal-product expected agreement; in the degenerate case
    where expected agreement is exactly 1 it is reported as 0 with a
    KappaDegenerateWarning.
    """
    tp, fp, fn, tn = confusion(preds)
    n = tp + fp + fn + tn
    f1 = 0.0 if (2 * tp + fp + fn) == 0 else 2 * tp / (2 * tp + fp + fn)
    p_o = (tp + tn) / n
    p_e = ((tp + fp) * (tp + fn) + (fn + tn) * (fp + tn)) / (n * n)
    if p_e == 1.0:
        warnings.warn(
            "expected agreement is 1; kappa undefined, reporting 0",
            KappaDegenerateWarning,
            stacklevel=2,
        )
        kappa = 0.0
    else:
        kappa = (p_o - p_e) / (1.0 - p_e)
    return float(f1), float(kappa)


def summarize(preds: ScoredPredictions) -> dict[str, float]:
    f1, kappa = f1_and_kappa(preds)
    return {"auroc": auroc(preds), "auprc": auprc(preds), "f1": f1, "kappa": kappa}

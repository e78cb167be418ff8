"""Ranking and probabilistic evaluation metrics."""

from __future__ import annotations

import numpy as np

PROB_CLIP = 1e-12


class MetricError(ValueError):
    pass


def _split(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError("scores and labels must be 1-D arrays of equal length")
    if not np.all((labels == 0) | (labels == 1)):
        raise MetricError("labels must be 0/1")
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise MetricError("AUC needs at least one positive and one negative example")
    return pos, neg


def auc(scores, labels, ties: str = "strict") -> float:
    """Pairwise AUC: fraction of (positive, negative) pairs ranked correctly.

    ``ties="strict"`` gives tied pairs no credit; ``ties="half"`` gives them
    one half, which is the conventional ROC-area value.  O(n log n).
    """
    pos, neg = _split(scores, labels)
    neg = np.sort(neg)
    below = np.searchsorted(neg, pos, side="left")
    wins = int(below.sum())
    if ties == "strict":
        return wins / (pos.size * neg.size)
    if ties == "half":
        equal = int((np.searchsorted(neg, pos, side="right") - below).sum())
        return (wins + 0.5 * equal) / (pos.size * neg.size)
    raise ValueError(f"ties must be 'strict' or 'half', got {ties!r}")


def rela_impr(measured_auc: float, base_auc: float) -> float:
    """Relative improvement of (AUC - 0.5) over a base model, in percent."""
    if base_auc == 0.5:
        raise MetricError("RelaImpr is undefined for a base AUC of exactly 0.5")
    return ((measured_auc - 0.5) / (base_auc - 0.5) - 1.0) * 100.0


def log_loss(probs, labels) -> float:
    p = np.clip(np.asarray(probs, dtype=np.float64), PROB_CLIP, 1.0 - PROB_CLIP)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))

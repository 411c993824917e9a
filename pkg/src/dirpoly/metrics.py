"""Node-classification metrics."""
from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


class MetricUndefined(ValueError):
    pass


def _select(mask, n: int) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise ValueError(f"mask has shape {mask.shape}, expected ({n},)")
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        raise MetricUndefined("mask selects no nodes")
    return idx


def accuracy(logits, labels, mask) -> float:
    """Fraction of masked nodes whose argmax class matches; ties go to the lowest index."""
    logits = np.asarray(logits)
    idx = _select(mask, logits.shape[0])
    # np.argmax returns the first maximal index
    pred = np.argmax(logits[idx], axis=1)
    return float(np.mean(pred == np.asarray(labels)[idx]))


def roc_auc(scores, labels, mask) -> float:
    """Mann-Whitney AUC with midranks: P(positive outranks negative), ties count 1/2."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    idx = _select(mask, scores.shape[0])
    s = scores[idx]
    y = np.asarray(labels)[idx] == 1
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefined("AUC undefined: mask holds a single class")
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))

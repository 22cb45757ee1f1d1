"""Predictive-uncertainty decomposition and ROC/AUC discrimination metrics.

Entropies are in nats. The total entropy of the ensemble marginal splits
into the mean predictor entropy (aleatoric) and the remainder, the mutual
information between prediction and weights (epistemic).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_TOL = 1e-6


def _xlogx(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p, dtype=np.float64)
    nz = p > 0
    out[nz] = p[nz] * np.log(p[nz])
    return out


def entropy(p, axis: int = -1, validate: bool = True) -> np.ndarray:
    """Shannon entropy along ``axis`` with 0 ln 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    if validate:
        if p.size == 0 or p.shape[axis] == 0:
            raise ValueError("empty probability vector")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must be finite and non-negative")
        if np.any(np.abs(p.sum(axis=axis) - 1.0) > PROB_TOL):
            raise ValueError("probabilities must sum to 1")
    return -_xlogx(p).sum(axis=axis)


@dataclass(frozen=True)
class UncertaintyTriple:
    """Per-input total, aleatoric and epistemic entropy (nats)."""

    total: np.ndarray
    aleatoric: np.ndarray
    epistemic: np.ndarray

    def __len__(self) -> int:
        return len(self.total)


def decompose(probs) -> UncertaintyTriple:
    """``probs`` shaped (inputs, n_mc, classes), or (n_mc, classes) for one input.

    Accepts anything with a ``probs`` attribute (a predictor set).
    """
    probs = np.asarray(getattr(probs, "probs", probs), dtype=np.float64)
    if probs.ndim == 2:
        probs = probs[None]
    if probs.ndim != 3:
        raise ValueError("expected predictors shaped (inputs, n_mc, classes)")
    if probs.shape[1] == 0:
        raise ValueError("empty predictor set")
    u_a = entropy(probs, axis=-1).mean(axis=1)
    u_tot = entropy(probs.mean(axis=1), axis=-1)
    # averaging identical predictors can round; agreement means no epistemic part
    agree = np.all(probs == probs[:, :1], axis=(1, 2))
    u_tot = np.where(agree, u_a, u_tot)
    return UncertaintyTriple(u_tot, u_a, u_tot - u_a)


# --- ROC ---------------------------------------------------------------------


def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isin(labels, (0, 1, False, True))):
        raise ValueError("labels must be binary")
    labels = labels.astype(bool)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise ValueError("ROC needs both positive and negative labels")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    return scores, labels


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds), one point per distinct score, descending.

    The curve starts at (0, 0) with an infinite threshold. Tied scores form
    one step, so the trapezoid under it counts ties as half.
    """
    scores, labels = _check_binary(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    tpr = np.r_[0.0, tp / tp[-1]]
    fpr = np.r_[0.0, fp / fp[-1]]
    return fpr, tpr, np.r_[np.inf, s[last]]


def roc_auc(scores, labels) -> float:
    fpr, tpr, _ = roc_curve(scores, labels)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def aleatoric_roc(u_a, correct) -> float:
    """AUC for flagging misclassified inputs by their aleatoric uncertainty."""
    correct = np.asarray(correct, dtype=bool)
    if correct.all() or not correct.any():
        raise ValueError("aleatoric ROC undefined: predictions are all correct or all wrong")
    return roc_auc(u_a, ~correct)


def epistemic_roc(u_e_ind, u_e_ood) -> float:
    """AUC for separating out-of-distribution inputs by epistemic uncertainty."""
    u_e_ind, u_e_ood = np.ravel(u_e_ind), np.ravel(u_e_ood)
    if u_e_ind.size == 0 or u_e_ood.size == 0:
        raise ValueError("epistemic ROC needs in- and out-of-distribution inputs")
    scores = np.r_[u_e_ind, u_e_ood]
    labels = np.r_[np.zeros(u_e_ind.size, bool), np.ones(u_e_ood.size, bool)]
    return roc_auc(scores, labels)

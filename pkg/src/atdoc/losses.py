"""Training objectives returning a batch-mean value and its gradient w.r.t. logits.

Pseudo labels and confidence weights are constants: no gradient flows
through them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .labelers import PseudoLabel
from .ndmath import as_matrix, softmax_rows

PROB_FLOOR = 1e-12


@dataclass
class LossOutput:
    value: float
    dlogits: np.ndarray


def _labels(labels, n: int, k: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64).ravel()
    if y.shape != (n,):
        raise ValueError(f"expected {n} labels, got {y.size}")
    if n and (y.min() < 0 or y.max() >= k):
        raise ValueError("label out of range")
    return y


def _weighted_ce(probs: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> LossOutput:
    n, k = probs.shape
    rows = np.arange(n)
    logp = np.log(np.maximum(probs[rows, labels], PROB_FLOOR))
    value = float(np.mean(-weights * logp))
    grad = probs.copy()
    grad[rows, labels] -= 1.0
    grad *= (weights / n)[:, None]
    return LossOutput(value, grad)


def lsr_loss(logits, labels, epsilon: float = 0.1) -> LossOutput:
    """Cross-entropy against ``(1 - eps) * onehot + eps / K``."""
    if not 0.0 <= epsilon < 1.0:
        raise ValueError("epsilon must lie in [0, 1)")
    p = softmax_rows(logits)
    n, k = p.shape
    y = _labels(labels, n, k)
    t = np.full((n, k), epsilon / k)
    t[np.arange(n), y] += 1.0 - epsilon
    value = float(np.mean(-(t * np.log(np.maximum(p, PROB_FLOOR))).sum(axis=1)))
    return LossOutput(value, (p - t) / n)


def pl_loss_lee(probs) -> LossOutput:
    p = as_matrix(probs)
    return _weighted_ce(p, p.argmax(axis=1), np.ones(p.shape[0]))


def pl_loss_weighted(probs) -> LossOutput:
    """Hard-label CE weighted by the (detached) max probability."""
    p = as_matrix(probs)
    y = p.argmax(axis=1)
    return _weighted_ce(p, y, p[np.arange(p.shape[0]), y])


def minent_loss(probs) -> LossOutput:
    """Mean Shannon entropy with its exact gradient through the softmax."""
    p = as_matrix(probs)
    n = p.shape[0]
    logp = np.log(np.maximum(p, PROB_FLOOR))
    h = -(p * logp).sum(axis=1)
    # dH/dz_j = -p_j (log p_j + H)
    grad = -p * (logp + h[:, None]) / n
    return LossOutput(float(h.mean()), grad)


def nc_loss(probs, pseudo: Sequence[PseudoLabel]) -> LossOutput:
    p = as_matrix(probs)
    y = _labels([pl.label for pl in pseudo], *p.shape)
    return _weighted_ce(p, y, np.ones(p.shape[0]))


def na_loss(probs, pseudo: Sequence[PseudoLabel], weighted: bool = True) -> LossOutput:
    """Confidence-weighted hard-label CE; ``weighted=False`` drops the weights."""
    p = as_matrix(probs)
    y = _labels([pl.label for pl in pseudo], *p.shape)
    w = np.array([pl.confidence for pl in pseudo]) if weighted else np.ones(p.shape[0])
    if np.any(w < 0) or np.any(w > 1):
        raise ValueError("confidences must lie in [0, 1]")
    return _weighted_ce(p, y, w)

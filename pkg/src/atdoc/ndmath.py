"""Dense numeric kernels shared across the package.

Matrices are plain 2-D ``float64`` numpy arrays. Every function here is pure.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np


def as_matrix(a, cols: Optional[int] = None) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if cols is not None and m.shape[1] != cols:
        raise ValueError(f"expected {cols} columns, got {m.shape[1]}")
    return m


def softmax_rows(logits) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction."""
    z = as_matrix(logits)
    if z.size == 0:
        raise ValueError("empty input")
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite logits")
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def row_norms(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", a, a))


def cosine_sim(queries, keys) -> np.ndarray:
    """Pairwise cosine similarity, shape ``(len(queries), len(keys))``."""
    q = as_matrix(queries)
    k = as_matrix(keys)
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"dimension mismatch: {q.shape[1]} vs {k.shape[1]}")
    qn = row_norms(q)
    kn = row_norms(k)
    if np.any(qn == 0) or np.any(kn == 0):
        raise ValueError("zero vector has undefined direction")
    sim = (q / qn[:, None]) @ (k / kn[:, None]).T
    return np.clip(sim, -1.0, 1.0)


def argmax_lowest(row) -> int:
    # np.argmax already returns the first maximal index
    return int(np.argmax(np.asarray(row)))


def topk_indices(scores: Sequence[float], k: int, exclude: Optional[int] = None) -> list[int]:
    """Indices of the ``k`` largest scores in descending order.

    Ties go to the lower index. ``exclude``, when given, is never returned.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    usable = s.size - (1 if exclude is not None and 0 <= exclude < s.size else 0)
    if k < 0 or k > usable:
        raise ValueError("neighborhood larger than bank")
    if k == 0:
        return []
    if exclude is not None and 0 <= exclude < s.size:
        keep = np.ones(s.size, dtype=bool)
        keep[exclude] = False
        idx = np.flatnonzero(keep)
        chosen = _topk_core(s[keep], k)
        return [int(idx[c]) for c in chosen]
    return [int(c) for c in _topk_core(s, k)]


def _topk_core(s: np.ndarray, k: int) -> np.ndarray:
    # partition to find the k-th largest value, then settle ties by index
    if k < s.size:
        kth = np.partition(s, s.size - k)[s.size - k]
        above = np.flatnonzero(s > kth)
        tied = np.flatnonzero(s == kth)[: k - above.size]
        cand = np.concatenate([above, tied])
    else:
        cand = np.arange(s.size)
    order = np.lexsort((cand, -s[cand]))
    return cand[order]

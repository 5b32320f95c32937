"""Pseudo-label producers: network argmax, nearest centroid, neighborhood aggregation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .banks import CentroidBank, InstanceBank, bank_balanced_read
from .ndmath import as_matrix, cosine_sim, topk_indices


@dataclass(frozen=True)
class PseudoLabel:
    label: int
    confidence: float
    soft: Optional[np.ndarray] = None
    neighbors: Optional[tuple[int, ...]] = None


def argmax_label(probs_row) -> PseudoLabel:
    p = np.asarray(probs_row, dtype=np.float64).ravel()
    if not np.all(np.isfinite(p)):
        raise ValueError("non-finite probabilities")
    k = int(np.argmax(p))
    return PseudoLabel(k, float(p[k]), p.copy())


def nc_label(feature, bank: CentroidBank) -> PseudoLabel:
    return nc_label_batch(as_matrix(feature), bank)[0]


def nc_label_batch(features, bank: CentroidBank) -> list[PseudoLabel]:
    """Closest centroid under cosine distance; confidence is always 1."""
    # argmin of (1 - cos) is argmax of cos, first index on ties
    sim = cosine_sim(features, bank.centroids)
    return [PseudoLabel(int(j), 1.0) for j in np.argmax(sim, axis=1)]


def na_aggregate(
    query_feature,
    query_id: Optional[int],
    bank: InstanceBank,
    m: int,
    *,
    raw_confidence: bool = False,
    balanced: Optional[np.ndarray] = None,
) -> PseudoLabel:
    ids = None if query_id is None else [query_id]
    return na_aggregate_batch(
        as_matrix(query_feature), ids, bank, m, raw_confidence=raw_confidence, balanced=balanced
    )[0]


def na_aggregate_batch(
    features,
    query_ids: Optional[Sequence[Optional[int]]],
    bank: InstanceBank,
    m: int,
    *,
    raw_confidence: bool = False,
    balanced: Optional[np.ndarray] = None,
) -> list[PseudoLabel]:
    """Average the class-balanced predictions of each query's m nearest bank rows.

    A query's own bank row (looked up through ``query_ids``) is never a
    neighbor. The averaged vector is renormalized to sum to one before the
    confidence is taken unless ``raw_confidence`` is set; the label is the
    same either way.
    """
    q = as_matrix(features, cols=bank.features.shape[1])
    if m < 1:
        raise ValueError("m must be at least 1")
    p_bal = bank_balanced_read(bank) if balanced is None else balanced
    sim = cosine_sim(q, bank.features)
    if query_ids is None:
        query_ids = [None] * q.shape[0]
    out = []
    for i, sid in enumerate(query_ids):
        own = None if sid is None else bank.index.get(int(sid))
        nbrs = topk_indices(sim[i], m, exclude=own)
        q_raw = p_bal[nbrs].mean(axis=0)
        soft = q_raw / q_raw.sum()
        k = int(np.argmax(soft))
        conf = float(q_raw[k]) if raw_confidence else float(soft[k])
        out.append(PseudoLabel(k, conf, soft, tuple(nbrs)))
    return out

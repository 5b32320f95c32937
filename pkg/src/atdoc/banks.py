"""Memory structures: EMA class centroids and the per-sample instance bank."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .autonet import NetParams, forward
from .ndmath import as_matrix


@dataclass
class CentroidBank:
    """K x b table of smoothed class centroids.

    ``initialized[j]`` is False until class ``j`` has received a real
    observation; its first batch mean then replaces the placeholder outright.
    """

    centroids: np.ndarray
    gamma: float = 0.1
    initialized: np.ndarray = None

    def __post_init__(self):
        self.centroids = as_matrix(self.centroids).copy()
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.initialized is None:
            self.initialized = np.ones(self.centroids.shape[0], dtype=bool)
        else:
            self.initialized = np.asarray(self.initialized, dtype=bool).copy()

    @property
    def class_count(self) -> int:
        return self.centroids.shape[0]

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "centroids": self.centroids.tolist(),
            "initialized": self.initialized.tolist(),
        }


def centroid_update(bank: CentroidBank, batch_features, batch_pseudo: Sequence[int]) -> None:
    feats = as_matrix(batch_features)
    if feats.shape[1] != bank.centroids.shape[1]:
        raise ValueError(
            f"feature dim {feats.shape[1]} does not match centroid dim {bank.centroids.shape[1]}"
        )
    labels = np.asarray(batch_pseudo, dtype=np.int64)
    if labels.shape != (feats.shape[0],):
        raise ValueError("one pseudo label per feature row required")
    if labels.size and (labels.min() < 0 or labels.max() >= bank.class_count):
        raise ValueError("pseudo label out of range")
    for j in np.unique(labels):
        batch_mean = feats[labels == j].mean(axis=0)
        if bank.initialized[j]:
            bank.centroids[j] = bank.gamma * batch_mean + (1.0 - bank.gamma) * bank.centroids[j]
        else:
            bank.centroids[j] = batch_mean
            bank.initialized[j] = True


@dataclass
class InstanceBank:
    """Per-sample features and sharpened predictions ``p ** (1/T)``.

    Rows are addressed through ``index``, a map from sample id to row.
    Class balancing happens lazily in :func:`bank_balanced_read` so that
    overwrites stay exact.
    """

    features: np.ndarray
    raw_sharp: np.ndarray
    temperature: float = 0.5
    index: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.features.shape[0] != self.raw_sharp.shape[0]:
            raise ValueError("feature and prediction tables must have the same row count")
        if not self.index:
            self.index = {i: i for i in range(self.features.shape[0])}

    @classmethod
    def empty(cls, ids: Iterable[int], feature_dim: int, class_count: int, temperature: float = 0.5):
        ids = list(ids)
        return cls(
            np.zeros((len(ids), feature_dim)),
            np.zeros((len(ids), class_count)),
            temperature,
            {sid: row for row, sid in enumerate(ids)},
        )

    def __len__(self) -> int:
        return self.features.shape[0]

    def rows(self, sample_ids: Sequence[int]) -> np.ndarray:
        try:
            return np.array([self.index[int(s)] for s in sample_ids], dtype=np.int64)
        except KeyError as e:
            raise KeyError(f"unknown sample id {e.args[0]}") from None

    def to_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "ids": [int(s) for s in self.index],
            "rows": [int(r) for r in self.index.values()],
            "features": self.features.tolist(),
            "raw_sharp": self.raw_sharp.tolist(),
        }


def bank_write(bank: InstanceBank, sample_ids: Sequence[int], features, probs) -> None:
    """Overwrite rows in place; no moving average."""
    rows = bank.rows(sample_ids)
    f = as_matrix(features, cols=bank.features.shape[1])
    p = as_matrix(probs, cols=bank.raw_sharp.shape[1])
    if f.shape[0] != rows.size or p.shape[0] != rows.size:
        raise ValueError("row count mismatch between ids, features and probs")
    bank.features[rows] = f
    bank.raw_sharp[rows] = p if bank.temperature == 1.0 else p ** (1.0 / bank.temperature)


def bank_balanced_read(bank: InstanceBank) -> np.ndarray:
    """Sharpened predictions divided by their column totals over the whole bank."""
    totals = bank.raw_sharp.sum(axis=0)
    if np.any(totals <= 0):
        raise ValueError("class has zero total mass")
    return bank.raw_sharp / totals


def bank_init(
    target_x,
    params: NetParams,
    *,
    temperature: float = 0.5,
    gamma: float = 0.1,
    target_ids: Sequence[int] | None = None,
    extra_x=None,
    extra_ids: Sequence[int] | None = None,
) -> tuple[CentroidBank, InstanceBank]:
    """Fill both banks from one forward pass over every target sample.

    ``extra_x``/``extra_ids`` add non-target rows (source memory) to the
    instance bank only; centroids always come from target samples.
    """
    x = as_matrix(target_x, cols=params.spec.input_dim)
    if x.shape[0] == 0:
        raise ValueError("target set is empty")
    ids = list(range(x.shape[0])) if target_ids is None else [int(i) for i in target_ids]
    cache = forward(params, x)
    feats, probs = cache.features, cache.probs

    K = params.spec.class_count
    labels = probs.argmax(axis=1)
    centroids = np.tile(feats.mean(axis=0), (K, 1))
    initialized = np.zeros(K, dtype=bool)
    for j in range(K):
        mask = labels == j
        if mask.any():
            centroids[j] = feats[mask].mean(axis=0)
            initialized[j] = True
    cbank = CentroidBank(centroids, gamma, initialized)

    if extra_x is not None and len(extra_x):
        ex = forward(params, as_matrix(extra_x, cols=params.spec.input_dim))
        feats = np.vstack([feats, ex.features])
        probs = np.vstack([probs, ex.probs])
        ids = ids + [int(i) for i in extra_ids]
    ibank = InstanceBank.empty(ids, feats.shape[1], K, temperature)
    bank_write(ibank, ids, feats, probs)
    return cbank, ibank


def snapshot_json(centroid_bank: CentroidBank | None, instance_bank: InstanceBank | None) -> str:
    """Debug dump of bank state. Not a stable format."""
    doc = {
        "centroid_bank": centroid_bank.to_dict() if centroid_bank is not None else None,
        "instance_bank": instance_bank.to_dict() if instance_bank is not None else None,
    }
    return json.dumps(doc)

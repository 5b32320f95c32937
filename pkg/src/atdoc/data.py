"""Synthetic domain-shift datasets, CSV I/O and task splits.

Ground-truth labels of unlabeled target samples live in :class:`SealedLabels`
and are stripped from the :class:`TrainingView` that training code consumes.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

UNLABELED = -1


class Task(str, Enum):
    UDA = "UDA"
    SSDA = "SSDA"
    PDA = "PDA"
    SSL = "SSL"


class SealedLabels:
    """Evaluation-only labels. Training code never calls :meth:`reveal`."""

    __slots__ = ("_y",)

    def __init__(self, labels):
        self._y = np.asarray(labels, dtype=np.int64).copy()
        self._y.setflags(write=False)

    def __len__(self) -> int:
        return self._y.size

    def __repr__(self) -> str:
        return f"SealedLabels(n={self._y.size})"

    def __eq__(self, other) -> bool:
        return isinstance(other, SealedLabels) and np.array_equal(self._y, other._y)

    def reveal(self) -> np.ndarray:
        return self._y

    def subset(self, idx) -> "SealedLabels":
        return SealedLabels(self._y[idx])


@dataclass(frozen=True)
class TrainingView:
    """Everything a trainer may see: no hidden target labels."""

    source_x: np.ndarray
    source_y: np.ndarray
    tl_x: np.ndarray
    tl_y: np.ndarray
    tu_x: np.ndarray
    class_count: int

    @property
    def dim(self) -> int:
        return self.source_x.shape[1] if self.source_x.size else self.tu_x.shape[1]


def _rows(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        return a
    return a.reshape(len(a), -1) if a.size else np.zeros((0, 0))


@dataclass
class DomainDataset:
    source_x: np.ndarray
    source_y: np.ndarray
    target_x: np.ndarray
    hidden: SealedLabels
    class_count: int
    tl_x: np.ndarray = None
    tl_y: np.ndarray = None
    task: Task = Task.UDA

    def __post_init__(self):
        self.source_x = _rows(self.source_x)
        self.source_y = np.asarray(self.source_y, dtype=np.int64)
        self.target_x = _rows(self.target_x)
        d = self.dim
        if self.tl_x is None:
            self.tl_x = np.zeros((0, d))
            self.tl_y = np.zeros(0, dtype=np.int64)
        self.tl_x = np.asarray(self.tl_x, dtype=np.float64).reshape(-1, d)
        self.tl_y = np.asarray(self.tl_y, dtype=np.int64)
        if len(self.hidden) != self.target_x.shape[0]:
            raise ValueError("one sealed label per unlabeled target sample required")
        if self.source_y.size and (self.source_y.min() < 0 or self.source_y.max() >= self.class_count):
            raise ValueError("source labels must be in [0, K)")

    @property
    def dim(self) -> int:
        for a in (self.source_x, self.target_x):
            if a.size:
                return a.shape[1]
        return self.tl_x.shape[1] if self.tl_x is not None and self.tl_x.size else 0

    @property
    def n_source(self) -> int:
        return self.source_x.shape[0]

    @property
    def n_target_labeled(self) -> int:
        return self.tl_x.shape[0]

    @property
    def n_target_unlabeled(self) -> int:
        return self.target_x.shape[0]

    def training_view(self) -> TrainingView:
        return TrainingView(
            self.source_x, self.source_y, self.tl_x, self.tl_y, self.target_x, self.class_count
        )

    def equals(self, other: "DomainDataset") -> bool:
        return (
            self.class_count == other.class_count
            and self.task == other.task
            and self.hidden == other.hidden
            and all(
                np.array_equal(a, b)
                for a, b in [
                    (self.source_x, other.source_x),
                    (self.source_y, other.source_y),
                    (self.target_x, other.target_x),
                    (self.tl_x, other.tl_x),
                    (self.tl_y, other.tl_y),
                ]
            )
        )


def _moons(rng: np.random.Generator, n: int, noise: float) -> tuple[np.ndarray, np.ndarray]:
    n0 = n // 2
    n1 = n - n0
    t0 = rng.uniform(0.0, np.pi, n0)
    t1 = rng.uniform(0.0, np.pi, n1)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    x = np.vstack([upper, lower])
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    x = x + noise * rng.standard_normal(x.shape)
    perm = rng.permutation(n)
    return x[perm], y[perm]


def gen_two_moons_shift(
    n_per_domain: int, rotation_deg: float, noise_sigma: float = 0.1, seed: int = 0
) -> DomainDataset:
    """Interleaved half circles; the target is a rotated copy about the origin."""
    if n_per_domain < 2:
        raise ValueError("need at least 2 samples per domain")
    if noise_sigma < 0:
        raise ValueError("noise must be nonnegative")
    rng = np.random.default_rng(seed)
    xs, ys = _moons(rng, n_per_domain, noise_sigma)
    xt, yt = _moons(rng, n_per_domain, noise_sigma)
    a = np.deg2rad(rotation_deg)
    rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    return DomainDataset(xs, ys, xt @ rot.T, SealedLabels(yt), 2)


def blob_means(K: int, d: int) -> np.ndarray:
    # evenly spaced on a circle in the first two axes; neighbours are 5 apart
    r = 2.5 / np.sin(np.pi / K)
    ang = 2.0 * np.pi * np.arange(K) / K
    means = np.zeros((K, d))
    means[:, 0] = r * np.cos(ang)
    means[:, 1] = r * np.sin(ang)
    return means


def gen_gaussian_blobs_shift(
    K: int, d: int, n_per_class: int, shift_vector=None, seed: int = 0
) -> DomainDataset:
    if K < 2 or d < 2:
        raise ValueError("need K >= 2 and d >= 2")
    if n_per_class < 1:
        raise ValueError("need at least one sample per class")
    shift = np.zeros(d) if shift_vector is None else np.asarray(shift_vector, dtype=np.float64)
    if shift.shape != (d,):
        raise ValueError(f"shift vector must have length {d}")
    rng = np.random.default_rng(seed)
    means = blob_means(K, d)
    y = np.repeat(np.arange(K), n_per_class)

    def draw(offset):
        x = means[y] + offset + rng.standard_normal((y.size, d))
        perm = rng.permutation(y.size)
        return x[perm], y[perm]

    xs, ys = draw(np.zeros(d))
    xt, yt = draw(shift)
    return DomainDataset(xs, ys, xt, SealedLabels(yt), K)


@dataclass(frozen=True)
class SplitSpec:
    task: Task = Task.UDA
    shots_per_class: int = 0
    target_class_count: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        if self.task in (Task.SSDA, Task.SSL) and self.shots_per_class < 1:
            raise ValueError(f"{self.task.value} needs shots_per_class >= 1")
        if self.task is Task.PDA and (self.target_class_count is None or self.target_class_count < 1):
            raise ValueError("PDA needs target_class_count >= 1")


def apply_split(ds: DomainDataset, spec: SplitSpec) -> DomainDataset:
    if ds.n_target_labeled:
        raise ValueError("dataset is already split")
    truth = ds.hidden.reveal()
    if spec.task is Task.UDA:
        return replace(ds, task=Task.UDA)
    if spec.task is Task.PDA:
        if spec.target_class_count > ds.class_count:
            raise ValueError("target_class_count exceeds class count")
        keep = (truth >= 0) & (truth < spec.target_class_count)
        return replace(ds, target_x=ds.target_x[keep], hidden=ds.hidden.subset(keep), task=Task.PDA)

    rng = np.random.default_rng(spec.seed)
    picked = []
    for k in range(ds.class_count):
        pool = np.flatnonzero(truth == k)
        if pool.size < spec.shots_per_class:
            raise ValueError(
                f"class {k} has {pool.size} target samples, need {spec.shots_per_class}"
            )
        picked.append(np.sort(rng.choice(pool, spec.shots_per_class, replace=False)))
    picked = np.concatenate(picked)
    rest = np.setdiff1d(np.arange(truth.size), picked)
    out = replace(
        ds,
        target_x=ds.target_x[rest],
        hidden=ds.hidden.subset(rest),
        tl_x=ds.target_x[picked],
        tl_y=truth[picked].copy(),
        task=spec.task,
    )
    if spec.task is Task.SSL:
        d = ds.dim
        out = replace(out, source_x=np.zeros((0, d)), source_y=np.zeros(0, dtype=np.int64))
    return out


HEADER_PREFIX = ["domain", "label"]


def save_csv(ds: DomainDataset, path) -> None:
    """Write ``domain,label,f0..`` rows. Labeled target rows are folded back into the target domain."""
    d = ds.dim
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER_PREFIX + [f"f{i}" for i in range(d)])
    for x, y in zip(ds.source_x, ds.source_y):
        w.writerow(["source", int(y)] + [repr(float(v)) for v in x])
    for x, y in zip(ds.tl_x, ds.tl_y):
        w.writerow(["target", int(y)] + [repr(float(v)) for v in x])
    for x, y in zip(ds.target_x, ds.hidden.reveal()):
        w.writerow(["target", int(y)] + [repr(float(v)) for v in x])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def load_csv(path, class_count: Optional[int] = None) -> DomainDataset:
    """Parse a dataset file. Every target row becomes unlabeled for training;
    its label (or -1) is kept sealed for evaluation."""
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError(f"{path}: empty file") from None
    if header[:2] != HEADER_PREFIX or len(header) < 3:
        raise ValueError(f"{path}: line 1: header must start with domain,label,f0")
    d = len(header) - 2
    if header[2:] != [f"f{i}" for i in range(d)]:
        raise ValueError(f"{path}: line 1: feature columns must be named f0..f{d - 1}")
    src_x, src_y, tgt_x, tgt_y = [], [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != d + 2:
            raise ValueError(f"{path}: line {lineno}: expected {d + 2} columns, got {len(row)}")
        domain, label = row[0], row[1]
        try:
            y = int(label)
            x = [float(v) for v in row[2:]]
        except ValueError:
            raise ValueError(f"{path}: line {lineno}: malformed number") from None
        if not np.all(np.isfinite(x)):
            raise ValueError(f"{path}: line {lineno}: non-finite feature")
        if y < UNLABELED:
            raise ValueError(f"{path}: line {lineno}: label must be >= -1")
        if domain == "source":
            if y == UNLABELED:
                raise ValueError(f"{path}: line {lineno}: source rows must be labeled")
            src_x.append(x)
            src_y.append(y)
        elif domain == "target":
            tgt_x.append(x)
            tgt_y.append(y)
        else:
            raise ValueError(f"{path}: line {lineno}: unknown domain {domain!r}")
    K = class_count if class_count is not None else max(src_y + tgt_y, default=-1) + 1
    if K < 1:
        raise ValueError(f"{path}: cannot infer class count from an unlabeled file")
    if max(src_y + tgt_y, default=-1) >= K:
        raise ValueError(f"{path}: label exceeds class count {K}")
    return DomainDataset(
        np.array(src_x).reshape(-1, d),
        np.array(src_y, dtype=np.int64),
        np.array(tgt_x).reshape(-1, d),
        SealedLabels(tgt_y),
        K,
    )

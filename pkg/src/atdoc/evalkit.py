"""Metrics, run results and the aggregate CSV report."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import statistics
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np


def accuracy(preds, truth) -> float:
    p = np.asarray(preds)
    t = np.asarray(truth)
    if p.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    if p.shape != t.shape:
        raise ValueError("preds and truth differ in length")
    return float(np.mean(p == t))


def per_class_mean_accuracy(preds, truth, K: int) -> tuple[np.ndarray, float]:
    """Per-class recall and its unweighted mean.

    Classes absent from ``truth`` get NaN, are left out of the mean and
    raise a ``UserWarning``.
    """
    p = np.asarray(preds)
    t = np.asarray(truth)
    if p.shape != t.shape:
        raise ValueError("preds and truth differ in length")
    recalls = np.full(K, np.nan)
    for k in range(K):
        mask = t == k
        if mask.any():
            recalls[k] = np.mean(p[mask] == k)
    missing = np.flatnonzero(np.isnan(recalls))
    if missing.size:
        warnings.warn(f"classes absent from truth: {missing.tolist()}", UserWarning, stacklevel=2)
    mean = float(np.nanmean(recalls)) if missing.size < K else float("nan")
    return recalls, mean


def pseudo_label_quality(pseudo, hidden_truth) -> Optional[float]:
    """Accuracy of pseudo labels against sealed truth; rows with unknown truth are skipped."""
    labels = np.array([pl.label if hasattr(pl, "label") else pl for pl in pseudo], dtype=np.int64)
    t = np.asarray(hidden_truth, dtype=np.int64)
    known = t >= 0
    if not known.any():
        return None
    return accuracy(labels[known], t[known])


def _clean(obj):
    # JSON has no NaN; undefined metrics become null
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


@dataclass
class RunResult:
    config: dict
    metrics: dict
    loss_curve: list[dict]
    pseudo_label_accuracy: list[Optional[float]]
    seed: int
    wall_clock_seconds: float = 0.0
    params_sha256: str = ""
    params: Any = field(default=None, repr=False, compare=False)

    def to_dict(self, include_timing: bool = True) -> dict:
        doc = {
            "config": self.config,
            "config_hash": config_hash(self.config),
            "seed": self.seed,
            "metrics": self.metrics,
            "params_sha256": self.params_sha256,
            "loss_curve": self.loss_curve,
            "pseudo_label_accuracy": self.pseudo_label_accuracy,
        }
        if include_timing:
            doc["wall_clock_seconds"] = self.wall_clock_seconds
        return _clean(doc)

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=1, sort_keys=True)


def config_hash(config: dict) -> str:
    canon = json.dumps(_clean(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_result(result: RunResult, path) -> None:
    atomic_write_text(path, result.to_json() + "\n")


REPORT_COLUMNS = [
    "kind",
    "name",
    "config_hash",
    "method",
    "task",
    "seed",
    "n",
    "accuracy",
    "accuracy_std",
    "mean_class_accuracy",
    "mean_class_accuracy_std",
    "runtime",
]


def _std(values: Sequence[float]) -> float:
    return statistics.stdev(values) if len(values) > 1 else 0.0


def build_report(result_dir) -> tuple[str, list[str]]:
    """One CSV row per result file plus mean/std rows per (method, task).

    Returns the CSV text and the list of files that could not be read.
    """
    rows, skipped = [], []
    for path in sorted(Path(result_dir).glob("*.json")):
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
            cfg = doc["config"]
            m = doc["metrics"]
            rows.append(
                {
                    "kind": "run",
                    "name": path.stem,
                    "config_hash": doc.get("config_hash", config_hash(cfg)),
                    "method": cfg["method"],
                    "task": cfg.get("task", "UDA"),
                    "seed": doc["seed"],
                    "n": 1,
                    "accuracy": m.get("target_accuracy"),
                    "mean_class_accuracy": m.get("target_mean_class_accuracy"),
                    "runtime": doc.get("wall_clock_seconds"),
                }
            )
        except (OSError, ValueError, KeyError, TypeError) as e:
            warnings.warn(f"skipping {path.name}: {e}", UserWarning, stacklevel=2)
            skipped.append(path.name)

    groups: dict[tuple[str, str], list[dict]] = {}
    for r in rows:
        groups.setdefault((r["method"], r["task"]), []).append(r)

    out = io.StringIO(newline="")
    w = csv.DictWriter(out, REPORT_COLUMNS, lineterminator="\n", restval="")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    for (method, task), members in sorted(groups.items()):
        acc = [r["accuracy"] for r in members if r["accuracy"] is not None]
        mca = [r["mean_class_accuracy"] for r in members if r["mean_class_accuracy"] is not None]
        rt = [r["runtime"] for r in members if r["runtime"] is not None]
        w.writerow(
            {
                "kind": "group",
                "name": f"{method}/{task}",
                "method": method,
                "task": task,
                "n": len(members),
                "accuracy": statistics.fmean(acc) if acc else "",
                "accuracy_std": _std(acc) if acc else "",
                "mean_class_accuracy": statistics.fmean(mca) if mca else "",
                "mean_class_accuracy_std": _std(mca) if mca else "",
                "runtime": statistics.fmean(rt) if rt else "",
            }
        )
    if skipped:
        w.writerow({"kind": "skipped", "name": ";".join(skipped), "n": len(skipped)})
    return out.getvalue(), skipped

"""Mini-batch training loop: labeled cross-entropy plus a ramped pseudo-label regularizer.

Each iteration reads pseudo labels from the memory banks as they stood
after the previous iteration, takes one SGD step, and only then writes the
current batch's features and predictions back into the banks.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import losses
from .autonet import NetGrads, NetParams, NetSpec, backward, forward, init_params, zeros_like
from .banks import CentroidBank, InstanceBank, bank_balanced_read, bank_init, bank_write, centroid_update
from .data import DomainDataset, SplitSpec, Task, TrainingView, apply_split
from .evalkit import RunResult, accuracy, per_class_mean_accuracy, pseudo_label_quality
from .labelers import PseudoLabel, argmax_label, na_aggregate_batch, nc_label_batch

METHODS = ("source_only", "minent", "pl_lee", "pl_weighted", "atdoc_nc", "atdoc_na")
DEFAULT_LAMBDA = {"atdoc_na": 0.2, "atdoc_nc": 0.1, "pl_lee": 0.1, "pl_weighted": 0.1, "minent": 0.1}


class ConfigError(ValueError):
    """Invalid training configuration; ``key`` names the offending field."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class TrainConfig:
    method: str = "atdoc_na"
    lambda_max: Optional[float] = None
    m: int = 5
    T: float = 0.5
    gamma: float = 0.1
    weighted: bool = True
    raw_confidence: bool = False
    source_memory: bool = False
    epsilon: float = 0.1
    batch_size: int = 12
    iterations: int = 3000
    lr0: float = 0.01
    lr_decay_alpha: float = 10.0
    lr_decay_beta: float = 0.75
    lr_scale_head: float = 1.0
    momentum: float = 0.9
    weight_decay: float = 1e-3
    hidden_dim: int = 64
    bottleneck_dim: int = 32
    seed: int = 0
    task: str = "UDA"
    shots_per_class: int = 0
    target_class_count: Optional[int] = None
    track_pseudo_labels: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError("method", f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.lambda_max is None:
            self.lambda_max = DEFAULT_LAMBDA.get(self.method, 0.0)
        checks = [
            ("lambda_max", self.lambda_max >= 0),
            ("m", self.m >= 1),
            ("T", self.T > 0),
            ("gamma", 0 < self.gamma <= 1),
            ("epsilon", 0 <= self.epsilon < 1),
            ("batch_size", self.batch_size >= 1),
            ("iterations", self.iterations >= 0),
            ("lr0", self.lr0 >= 0),
            ("momentum", 0 <= self.momentum < 1),
            ("weight_decay", self.weight_decay >= 0),
            ("hidden_dim", self.hidden_dim >= 1),
            ("bottleneck_dim", self.bottleneck_dim >= 1),
            ("task", self.task in {t.value for t in Task}),
        ]
        for key, ok in checks:
            if not ok:
                raise ConfigError(key, f"invalid value {getattr(self, key)!r}")

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        if not isinstance(doc, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        fields = {f.name: f for f in dataclasses.fields(cls)}
        for key, value in doc.items():
            if key not in fields:
                raise ConfigError(key, "unknown config key")
            _check_type(key, fields[key].type, value)
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError("<file>", f"invalid JSON: {e}") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def split_spec(self) -> SplitSpec:
        return SplitSpec(Task(self.task), self.shots_per_class, self.target_class_count, self.seed)


_TYPES = {"str": (str,), "int": (int,), "float": (int, float), "bool": (bool,)}


def _check_type(key: str, annotation: str, value: Any) -> None:
    ann = str(annotation)
    if value is None and ann.startswith("Optional"):
        return
    base = ann.removeprefix("Optional[").removesuffix("]")
    allowed = _TYPES[base]
    if isinstance(value, bool) and base != "bool":
        raise ConfigError(key, f"expected {base}, got bool")
    if not isinstance(value, allowed):
        raise ConfigError(key, f"expected {base}, got {type(value).__name__}")


@dataclass
class RampupSchedule:
    lambda_max: float
    total_iterations: int


def lambda_at(sched: RampupSchedule, t: int) -> float:
    if not 0 <= t <= sched.total_iterations:
        raise ValueError(f"iteration {t} outside [0, {sched.total_iterations}]")
    if sched.total_iterations == 0:
        return 0.0
    return sched.lambda_max * t / sched.total_iterations


def lr_at(lr0: float, t: int, total: int, alpha: float = 10.0, beta: float = 0.75) -> float:
    """Inverse decay ``lr0 * (1 + alpha * t/total) ** -beta``."""
    p = t / total if total else 0.0
    return lr0 * (1.0 + alpha * p) ** (-beta)


@dataclass
class OptState:
    velocity: NetGrads
    iteration: int = 0

    @classmethod
    def zeros(cls, params: NetParams) -> "OptState":
        return cls(zeros_like(params))


def sgd_step(
    params: NetParams,
    grads: NetGrads,
    opt: OptState,
    lr: float,
    momentum: float,
    weight_decay: float,
    lr_scales=None,
) -> None:
    """In place: ``v = momentum*v + g + wd*theta``; ``theta -= lr*v``."""
    scales = lr_scales or [1.0] * len(params.layers)
    for layer, grad, vel, s in zip(params.layers, grads.layers, opt.velocity.layers, scales):
        for name in ("weight", "bias"):
            theta = getattr(layer, name)
            v = getattr(vel, name)
            v *= momentum
            v += getattr(grad, name) + weight_decay * theta
            theta -= (lr * s) * v
    opt.iteration += 1


class CyclicSampler:
    """Endless shuffled index stream; reshuffles after every full pass."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch_size = batch_size
        self.rng = rng
        self._perm = np.zeros(0, dtype=np.int64)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self.n == 0:
            return np.zeros(0, dtype=np.int64)
        out = []
        need = self.batch_size
        while need:
            if self._pos >= self._perm.size:
                self._perm = self.rng.permutation(self.n)
                self._pos = 0
            take = self._perm[self._pos : self._pos + need]
            self._pos += take.size
            need -= take.size
            out.append(take)
        return np.concatenate(out)


@dataclass
class StepOutput:
    losses: dict[str, float]
    pseudo: list[PseudoLabel] = field(default_factory=list)


class Trainer:
    """Owns the mutable training state: parameters, optimizer and banks.

    Bank row ids: unlabeled target ``i`` -> ``i``; labeled target ``j`` ->
    ``N_tu + j``; source ``k`` -> ``N_tu + N_tl + k`` (only with
    ``source_memory``).
    """

    def __init__(self, config: TrainConfig, view: TrainingView):
        self.config = config
        self.view = view
        dim = view.tu_x.shape[1] if view.tu_x.size else view.dim
        self.spec = NetSpec(dim, config.hidden_dim, config.bottleneck_dim, view.class_count)
        self.params = init_params(self.spec, config.seed)
        self.opt = OptState.zeros(self.params)
        self.schedule = RampupSchedule(config.lambda_max, max(config.iterations, 1))
        self.lr_scales = [1.0, 1.0, config.lr_scale_head]
        self.centroid_bank: Optional[CentroidBank] = None
        self.instance_bank: Optional[InstanceBank] = None
        self.n_tu = view.tu_x.shape[0]
        self.n_tl = view.tl_x.shape[0]
        if config.method in ("atdoc_nc", "atdoc_na"):
            self.init_banks()

    def init_banks(self) -> None:
        c = self.config
        v = self.view
        target_x = np.vstack([v.tu_x, v.tl_x])
        extra_x = v.source_x if c.source_memory else None
        extra_ids = range(self.n_tu + self.n_tl, self.n_tu + self.n_tl + v.source_x.shape[0])
        cbank, ibank = bank_init(
            target_x, self.params, temperature=c.T, gamma=c.gamma, extra_x=extra_x, extra_ids=extra_ids
        )
        if c.method == "atdoc_nc":
            self.centroid_bank = cbank
        else:
            self.instance_bank = ibank

    def pseudo_labels(self, tu_idx: np.ndarray, features: np.ndarray, probs: np.ndarray) -> list[PseudoLabel]:
        c = self.config
        if c.method == "atdoc_nc":
            if self.centroid_bank is None:
                raise RuntimeError("atdoc_nc requires a centroid bank")
            return nc_label_batch(features, self.centroid_bank)
        if c.method == "atdoc_na":
            if self.instance_bank is None:
                raise RuntimeError("atdoc_na requires an instance bank")
            return na_aggregate_batch(
                features, tu_idx, self.instance_bank, c.m, raw_confidence=c.raw_confidence
            )
        if c.method in ("pl_lee", "pl_weighted"):
            return [argmax_label(row) for row in probs]
        return []

    def regularizer(self, probs: np.ndarray, pseudo: list[PseudoLabel]) -> losses.LossOutput:
        method = self.config.method
        if method == "minent":
            return losses.minent_loss(probs)
        if method == "pl_lee":
            return losses.pl_loss_lee(probs)
        if method == "pl_weighted":
            return losses.pl_loss_weighted(probs)
        if method == "atdoc_nc":
            return losses.nc_loss(probs, pseudo)
        return losses.na_loss(probs, pseudo, weighted=self.config.weighted)

    def train_step(
        self,
        source_batch: np.ndarray,
        target_batch: np.ndarray,
        t: int,
        target_labeled_batch: Optional[np.ndarray] = None,
    ) -> StepOutput:
        c = self.config
        v = self.view
        out: dict[str, float] = {}
        grads = zeros_like(self.params)

        src_cache = None
        if source_batch.size:
            src_cache = forward(self.params, v.source_x[source_batch])
            lo = losses.lsr_loss(src_cache.logits, v.source_y[source_batch], c.epsilon)
            out["lsr_s"] = lo.value
            grads = grads + backward(self.params, src_cache, lo.dlogits)

        tl_cache = None
        if target_labeled_batch is not None and target_labeled_batch.size:
            tl_cache = forward(self.params, v.tl_x[target_labeled_batch])
            lo = losses.lsr_loss(tl_cache.logits, v.tl_y[target_labeled_batch], c.epsilon)
            out["lsr_t"] = lo.value
            grads = grads + backward(self.params, tl_cache, lo.dlogits)

        pseudo: list[PseudoLabel] = []
        tu_cache = None
        if c.method != "source_only" and target_batch.size:
            tu_cache = forward(self.params, v.tu_x[target_batch])
            # banks still hold the previous iteration's state here
            pseudo = self.pseudo_labels(target_batch, tu_cache.features, tu_cache.probs)
            lam = lambda_at(self.schedule, min(t, self.schedule.total_iterations))
            reg = self.regularizer(tu_cache.probs, pseudo)
            out["reg_raw"] = reg.value
            out["lambda"] = lam
            out["reg"] = lam * reg.value
            if lam > 0:
                grads = grads + backward(self.params, tu_cache, lam * reg.dlogits)

        lr = lr_at(c.lr0, t, c.iterations, c.lr_decay_alpha, c.lr_decay_beta)
        sgd_step(self.params, grads, self.opt, lr, c.momentum, c.weight_decay, self.lr_scales)
        self.update_banks(target_batch, tu_cache, target_labeled_batch, tl_cache, source_batch, src_cache)

        out["total"] = out.get("lsr_s", 0.0) + out.get("lsr_t", 0.0) + out.get("reg", 0.0)
        out["lr"] = lr
        return StepOutput(out, pseudo)

    def update_banks(self, tu_idx, tu_cache, tl_idx, tl_cache, src_idx, src_cache) -> None:
        if tu_cache is None:
            return
        if self.centroid_bank is not None:
            centroid_update(self.centroid_bank, tu_cache.features, tu_cache.probs.argmax(axis=1))
        if self.instance_bank is not None:
            bank_write(self.instance_bank, tu_idx, tu_cache.features, tu_cache.probs)
            if tl_cache is not None:
                bank_write(self.instance_bank, self.n_tu + tl_idx, tl_cache.features, tl_cache.probs)
            if self.config.source_memory and src_cache is not None:
                ids = self.n_tu + self.n_tl + src_idx
                bank_write(self.instance_bank, ids, src_cache.features, src_cache.probs)


def params_checksum(params: NetParams) -> str:
    return hashlib.sha256(np.ascontiguousarray(params.flat()).tobytes()).hexdigest()


def evaluate(params: NetParams, dataset: DomainDataset) -> dict:
    """Final metrics. The only place sealed target labels are opened."""
    metrics: dict[str, Any] = {"warnings": []}
    if dataset.n_source:
        preds = forward(params, dataset.source_x).probs.argmax(axis=1)
        metrics["source_accuracy"] = accuracy(preds, dataset.source_y)
    truth = dataset.hidden.reveal()
    known = truth >= 0
    if known.any():
        preds = forward(params, dataset.target_x[known]).probs.argmax(axis=1)
        metrics["target_accuracy"] = accuracy(preds, truth[known])
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            recalls, mean = per_class_mean_accuracy(preds, truth[known], dataset.class_count)
        metrics["target_per_class_accuracy"] = recalls.tolist()
        metrics["target_mean_class_accuracy"] = mean
        metrics["warnings"] = [str(w.message) for w in caught]
    else:
        metrics["target_accuracy"] = None
        metrics["target_mean_class_accuracy"] = None
    return metrics


def run(config: TrainConfig, dataset: DomainDataset, *, trainer_hook=None) -> RunResult:
    """Split the dataset per the config, train for ``config.iterations`` steps, evaluate."""
    started = time.perf_counter()
    if dataset.n_target_labeled == 0:
        dataset = apply_split(dataset, config.split_spec())
    view = dataset.training_view()
    trainer = Trainer(config, view)
    if trainer_hook is not None:
        trainer_hook(trainer)

    root = np.random.SeedSequence(config.seed)
    rs, rtl, rtu = (np.random.default_rng(s) for s in root.spawn(3))
    src_sampler = CyclicSampler(view.source_x.shape[0], config.batch_size, rs)
    tl_sampler = CyclicSampler(view.tl_x.shape[0], config.batch_size, rtl)
    tu_sampler = CyclicSampler(view.tu_x.shape[0], config.batch_size, rtu)

    truth = dataset.hidden.reveal() if config.track_pseudo_labels else None
    loss_curve: list[dict] = []
    pl_curve: list[Optional[float]] = []
    for t in range(config.iterations):
        tu_idx = tu_sampler.next()
        step = trainer.train_step(src_sampler.next(), tu_idx, t, tl_sampler.next())
        loss_curve.append(step.losses)
        if truth is not None and step.pseudo:
            pl_curve.append(pseudo_label_quality(step.pseudo, truth[tu_idx]))
        else:
            pl_curve.append(None)

    metrics = evaluate(trainer.params, dataset)
    metrics.update(
        n_source=dataset.n_source,
        n_target_labeled=dataset.n_target_labeled,
        n_target_unlabeled=dataset.n_target_unlabeled,
    )
    return RunResult(
        config=config.to_dict(),
        metrics=metrics,
        loss_curve=loss_curve,
        pseudo_label_accuracy=pl_curve,
        seed=config.seed,
        wall_clock_seconds=time.perf_counter() - started,
        params_sha256=params_checksum(trainer.params),
        params=trainer.params,
    )

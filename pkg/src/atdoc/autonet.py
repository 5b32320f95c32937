"""Feature extractor G (d -> h -> b MLP) and linear head F (b -> K).

Layers compute ``z = x @ W + b`` with ``W`` of shape ``(fan_in, fan_out)``.
G applies ReLU after its hidden layer; the bottleneck output is linear.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .ndmath import as_matrix, softmax_rows

LAYER_NAMES = ("G.hidden", "G.bottleneck", "F.head")
CHECKPOINT_FORMAT = "atdoc-params"


@dataclass(frozen=True)
class NetSpec:
    input_dim: int
    hidden_dim: int = 64
    bottleneck_dim: int = 32
    class_count: int = 2

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "bottleneck_dim", "class_count"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v <= 0:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")

    @property
    def shapes(self) -> list[tuple[int, int]]:
        d, h, b, k = self.input_dim, self.hidden_dim, self.bottleneck_dim, self.class_count
        return [(d, h), (h, b), (b, k)]


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray


@dataclass
class NetParams:
    spec: NetSpec
    layers: list[Layer]

    def __post_init__(self):
        if len(self.layers) != 3:
            raise ValueError("expected three layers (hidden, bottleneck, head)")
        for layer, (fi, fo) in zip(self.layers, self.spec.shapes):
            if layer.weight.shape != (fi, fo) or layer.bias.shape != (fo,):
                raise ValueError(
                    f"layer shape {layer.weight.shape}/{layer.bias.shape} does not chain as ({fi},{fo})"
                )

    def arrays(self) -> Iterator[np.ndarray]:
        for layer in self.layers:
            yield layer.weight
            yield layer.bias

    def copy(self) -> "NetParams":
        return NetParams(self.spec, [Layer(l.weight.copy(), l.bias.copy()) for l in self.layers])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def equals(self, other: "NetParams") -> bool:
        return self.spec == other.spec and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )


@dataclass
class NetGrads:
    layers: list[Layer]
    inputs: np.ndarray | None = None

    def arrays(self) -> Iterator[np.ndarray]:
        for layer in self.layers:
            yield layer.weight
            yield layer.bias

    def __add__(self, other: "NetGrads") -> "NetGrads":
        return NetGrads(
            [Layer(a.weight + b.weight, a.bias + b.bias) for a, b in zip(self.layers, other.layers)]
        )


@dataclass
class ForwardCache:
    inputs: np.ndarray
    pre_hidden: np.ndarray
    hidden: np.ndarray
    features: np.ndarray
    logits: np.ndarray
    probs: np.ndarray = field(repr=False)


def init_params(spec: NetSpec, seed: int) -> NetParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in spec.shapes:
        a = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append(Layer(rng.uniform(-a, a, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return NetParams(spec, layers)


def forward(params: NetParams, inputs) -> ForwardCache:
    x = as_matrix(inputs)
    if x.shape[1] != params.spec.input_dim:
        raise ValueError(f"input has {x.shape[1]} columns, network expects {params.spec.input_dim}")
    l1, l2, l3 = params.layers
    pre = x @ l1.weight + l1.bias
    hid = np.maximum(pre, 0.0)
    feats = hid @ l2.weight + l2.bias
    logits = feats @ l3.weight + l3.bias
    return ForwardCache(x, pre, hid, feats, logits, softmax_rows(logits))


def backward(params: NetParams, cache: ForwardCache, dlogits) -> NetGrads:
    """Reverse-mode gradients given the loss gradient w.r.t. the logits."""
    g = np.asarray(dlogits, dtype=np.float64)
    if g.shape != cache.logits.shape:
        raise ValueError(f"dlogits shape {g.shape} does not match logits {cache.logits.shape}")
    l1, l2, l3 = params.layers
    d_w3 = cache.features.T @ g
    d_b3 = g.sum(axis=0)
    d_feat = g @ l3.weight.T
    d_w2 = cache.hidden.T @ d_feat
    d_b2 = d_feat.sum(axis=0)
    d_hid = d_feat @ l2.weight.T
    d_pre = d_hid * (cache.pre_hidden > 0)
    d_w1 = cache.inputs.T @ d_pre
    d_b1 = d_pre.sum(axis=0)
    d_x = d_pre @ l1.weight.T
    return NetGrads([Layer(d_w1, d_b1), Layer(d_w2, d_b2), Layer(d_w3, d_b3)], inputs=d_x)


def zeros_like(params: NetParams) -> NetGrads:
    return NetGrads([Layer(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in params.layers])


def params_to_dict(params: NetParams) -> dict:
    s = params.spec
    return {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "spec": {
            "input_dim": s.input_dim,
            "hidden_dim": s.hidden_dim,
            "bottleneck_dim": s.bottleneck_dim,
            "class_count": s.class_count,
        },
        "layers": [
            {
                "name": name,
                "weight": {"shape": list(l.weight.shape), "data": l.weight.ravel().tolist()},
                "bias": {"shape": list(l.bias.shape), "data": l.bias.tolist()},
            }
            for name, l in zip(LAYER_NAMES, params.layers)
        ],
    }


def params_from_dict(doc: dict) -> NetParams:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a parameter checkpoint")
    spec = NetSpec(**doc["spec"])
    layers = []
    for entry in doc["layers"]:
        w = np.array(entry["weight"]["data"], dtype=np.float64).reshape(entry["weight"]["shape"])
        b = np.array(entry["bias"]["data"], dtype=np.float64).reshape(entry["bias"]["shape"])
        layers.append(Layer(w, b))
    return NetParams(spec, layers)


def save_params(params: NetParams, path) -> None:
    # json writes floats with repr(), the shortest string that round-trips exactly
    Path(path).write_text(json.dumps(params_to_dict(params)), encoding="utf-8")


def load_params(path) -> NetParams:
    return params_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

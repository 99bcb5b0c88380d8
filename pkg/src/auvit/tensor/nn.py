"""Parameter containers and the stock layers the models are built from."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from ..errors import ShapeMismatch
from . import functional as F
from .core import Tensor


class Parameter(Tensor):
    """A trainable tensor. ``name`` is filled in by :meth:`Module.named_parameters`."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name


class Module:
    """Minimal module tree; children are discovered from instance attributes."""

    def named_parameters(self, prefix: str = "", _seen=None) -> Iterator[tuple]:
        seen = set() if _seen is None else _seen
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                if id(value) in seen:
                    continue
                seen.add(id(value))
                value.name = full
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".", seen)
            elif isinstance(value, (list, tuple)) and value and isinstance(value[0], Module):
                for i, child in enumerate(value):
                    yield from child.named_parameters(f"{full}.{i}.", seen)
            elif isinstance(value, dict) and value and isinstance(next(iter(value.values())), Module):
                for key, child in value.items():
                    yield from child.named_parameters(f"{full}.{key}.", seen)

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())

    def load_state_dict(self, state) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise ShapeMismatch(f"state mismatch: missing {missing[:5]}, unexpected {unexpected[:5]}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeMismatch(f"{name}: checkpoint shape {value.shape} != model shape {p.shape}")
            p.data = value.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) truncated to +-2 std by resampling."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng, bias: bool = True, std: float = 0.02):
        self.weight = Parameter(trunc_normal(rng, (in_features, out_features), std))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x):
        return F.layer_norm(x, self.weight, self.bias, self.eps)

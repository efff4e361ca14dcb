"""Small neural-network building blocks on top of the autodiff core."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Base class: collects parameters from Tensor/Module/list attributes."""

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        self._collect("", out)
        return out

    def _collect(self, prefix: str, out: dict[str, Tensor]) -> None:
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    out[key] = value
            elif isinstance(value, Module):
                value._collect(key + ".", out)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        item._collect(f"{key}.{i}.", out)
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out[f"{key}.{i}"] = item

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) ^ set(state)
        if missing:
            raise KeyError(f"parameter name mismatch: {sorted(missing)}")
        for name, p in params.items():
            arr = state[name]
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}


class Linear(Module):
    """Affine map on the last axis of a 2-d input."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / math.sqrt(d_in)
        self.w = Tensor(rng.uniform(-bound, bound, (d_in, d_out)), requires_grad=True)
        self.b = Tensor(rng.uniform(-bound, bound, d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        flat = x if x.ndim == 2 else ad.reshape(x, (-1, x.shape[-1]))
        y = ad.matmul(flat, self.w)
        if self.b is not None:
            y = ad.add(y, self.b)
        if x.ndim != 2:
            y = ad.reshape(y, x.shape[:-1] + (self.w.shape[1],))
        return y


class LayerNorm(Module):
    """Normalization over the last axis with learnable gain and bias."""

    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias, self.eps)


layer_norm = ad.layer_norm


class MLP(Module):
    """Linear -> relu -> linear."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator):
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ad.relu(self.fc1(x)))


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Rows scaled to unit L2 norm (stabilized near zero)."""
    sq = ad.reduce_sum(ad.multiply(x, x), axis=-1, keepdims=True)
    return ad.multiply(x, ad.divide(1.0, ad.sqrt(ad.add(sq, eps))))

"""Parameter containers: a minimal Module, Linear, BatchNorm, Glorot init."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import tensor as T
from .tensor import Tensor


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape, dtype=np.float64) -> Tensor:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-a, a, size=shape).astype(dtype), requires_grad=True)


def zeros(shape, dtype=np.float64) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Module:
    """Tracks parameters (``Tensor`` attrs), buffers, and child modules by name."""

    training = True

    def named_parameters(self, prefix: str = "") -> "OrderedDict[str, Tensor]":
        out: OrderedDict[str, Tensor] = OrderedDict()
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out[prefix + key] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(f"{prefix}{key}."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{prefix}{key}.{i}."))
        return out

    def named_buffers(self, prefix: str = "") -> "OrderedDict[str, np.ndarray]":
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for key in getattr(self, "_buffers", ()):
            out[prefix + key] = getattr(self, key)
        for key, val in vars(self).items():
            if isinstance(val, Module):
                out.update(val.named_buffers(f"{prefix}{key}."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_buffers(f"{prefix}{key}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, flag: bool = True) -> "Module":
        self.training = flag
        for val in vars(self).values():
            children = val if isinstance(val, (list, tuple)) else [val]
            for child in children:
                if isinstance(child, Module):
                    child.train(flag)
        return self

    def eval(self) -> "Module":
        return self.train(False)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, dtype=np.float64):
        self.weight = glorot(rng, in_dim, out_dim, (in_dim, out_dim), dtype)
        self.bias = zeros((1, out_dim), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class BatchNorm(Module):
    """Normalises the last axis using statistics over every other axis."""

    _buffers = ("running_mean", "running_var")

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float64):
        self.gamma = Tensor(np.ones((dim,), dtype=dtype), requires_grad=True)
        self.beta = zeros((dim,), dtype)
        self.running_mean = np.zeros(dim, dtype=dtype)
        self.running_var = np.ones(dim, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        dim = x.shape[-1]
        if self.training:
            flat = x.reshape(-1, dim)
            mu = T.mean(flat, axis=0)
            centered = x - mu
            var = T.mean((centered * centered).reshape(-1, dim), axis=0)
            n = flat.shape[0]
            m = self.momentum
            unbiased = var.data * (n / max(n - 1, 1))
            self.running_mean = ((1 - m) * self.running_mean + m * mu.data).astype(self.running_mean.dtype)
            self.running_var = ((1 - m) * self.running_var + m * unbiased).astype(self.running_var.dtype)
            return centered / T.sqrt(var + self.eps) * self.gamma + self.beta
        scale = self.gamma / np.sqrt(self.running_var + self.eps)
        return (x - self.running_mean) * scale + self.beta

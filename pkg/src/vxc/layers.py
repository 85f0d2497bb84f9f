"""Parameter containers and the small set of trainable layers the models use."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from vxc.autodiff import functional as F
from vxc.autodiff.tensor import Tensor


def uniform_param(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    """U(-s, s) with s = 1/sqrt(fan_in)."""
    s = 1.0 / math.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-s, s, size=shape).astype(dtype), requires_grad=True)


def he_uniform_param(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    """U(-s, s) with s = sqrt(6/fan_in): keeps activation variance through LeakyReLU stacks."""
    s = math.sqrt(6.0 / max(fan_in, 1))
    return Tensor(rng.uniform(-s, s, size=shape).astype(dtype), requires_grad=True)


def zeros_param(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Module:
    """Walks attributes to find parameters; shared tensors are reported once."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        seen = set()
        for name, p in self._walk(prefix):
            if id(p) not in seen:
                seen.add(id(p))
                yield name, p

    def _walk(self, prefix):
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            path = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield path, value
            elif isinstance(value, Module):
                yield from value._walk(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item._walk(f"{path}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{path}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_(self):
        """Set every parameter to zero (used by degenerate-case tests)."""
        for p in self.parameters():
            p.data[...] = 0


class Linear(Module):
    """y = x W + b for row-vector batches x of shape (B, n_in)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float64, bias: bool = True):
        self.weight = he_uniform_param(rng, (n_in, n_out), n_in, dtype)
        self.bias = zeros_param((n_out,), dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = F.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1,
                 padding: int | None = None, dtype=np.float64, bias: bool = True):
        self.weight = he_uniform_param(rng, (c_out, c_in, k, k), c_in * k * k, dtype)
        self.bias = zeros_param((c_out,), dtype) if bias else None
        self.stride = stride
        self.padding = k // 2 if padding is None else padding

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Conv3d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1,
                 padding: int | None = None, dtype=np.float64, bias: bool = True):
        self.weight = he_uniform_param(rng, (c_out, c_in, k, k, k), c_in * k ** 3, dtype)
        self.bias = zeros_param((c_out,), dtype) if bias else None
        self.stride = stride
        self.padding = k // 2 if padding is None else padding

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv3d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

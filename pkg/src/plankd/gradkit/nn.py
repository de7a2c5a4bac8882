"""Small parameter containers built on the op catalog."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import ops
from .tensor import GradkitError, Tensor


def fan_in_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
                   gain: float = math.sqrt(2.0)) -> np.ndarray:
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    """Base: subclasses set tensors as attributes and list them in ``_params``."""

    _params: tuple[str, ...] = ()

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name in self._params:
            yield prefix + name, getattr(self, name)

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]


class Linear(Layer):
    _params = ("weight", "bias")

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 gain: float = math.sqrt(2.0)):
        if n_in < 1 or n_out < 1:
            raise GradkitError(f"Linear: zero-dimension layer ({n_in} -> {n_out})")
        self.weight = Tensor(fan_in_uniform(rng, (n_in, n_out), n_in, gain), requires_grad=True)
        self.bias = Tensor(rng.uniform(-1, 1, size=n_out) / math.sqrt(n_in), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Layer):
    _params = ("weight", "bias")

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, kernel: int = 3,
                 stride: int = 1, padding: int = 1):
        if c_in < 1 or c_out < 1:
            raise GradkitError(f"Conv2d: zero-dimension layer ({c_in} -> {c_out})")
        fan_in = c_in * kernel * kernel
        self.weight = Tensor(fan_in_uniform(rng, (c_out, c_in, kernel, kernel), fan_in),
                             requires_grad=True)
        self.bias = Tensor(rng.uniform(-1, 1, size=c_out) / math.sqrt(fan_in),
                           requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class MLP(Layer):
    """Dense stack with LeakyReLU between layers (none after the last)."""

    def __init__(self, sizes: list[int], rng: np.random.Generator):
        if len(sizes) < 2:
            raise GradkitError("MLP needs at least an input and an output size")
        n = len(sizes) - 1
        self.layers = [Linear(a, b, rng, gain=math.sqrt(2.0) if i < n - 1 else 1.0)
                       for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]

    def named_parameters(self, prefix: str = ""):
        for i, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}{i}.")

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ops.leaky_relu(x)
        return x


def set_requires_grad(params, flag: bool) -> None:
    for p in params:
        p.requires_grad = flag
        p.grad = None

"""Parameter containers and the handful of layers the models are built from."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import ops
from .tensor import ConfigError, Tensor

GROUPS = ("backbone", "head")


class Parameter(Tensor):
    """A trainable tensor tagged with a learning-rate group."""

    __slots__ = ("group",)

    def __init__(self, data, group: str = "head", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        if group not in GROUPS:
            raise ConfigError(f"parameter group must be one of {GROUPS}, got {group!r}")
        self.group = group


class Module:
    """Minimal module tree: attributes that are Parameters or Modules are children."""

    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def set_group(self, group: str) -> "Module":
        for p in self.parameters():
            p.group = group
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> list[str]:
        """Copy matching arrays in; returns the names that were loaded."""
        loaded = []
        own = dict(self.named_parameters())
        for name, arr in state.items():
            if name not in own:
                if strict:
                    raise KeyError(f"unexpected parameter {name!r}")
                continue
            p = own[name]
            if p.shape != tuple(arr.shape):
                raise ValueError(f"shape mismatch for {name}: {p.shape} vs {arr.shape}")
            p.data = np.array(arr, dtype=p.dtype)
            loaded.append(name)
        if strict and len(loaded) != len(own):
            missing = sorted(set(own) - set(loaded))
            raise KeyError(f"missing parameters: {missing}")
        return loaded

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self


def _uniform(rng: np.random.Generator, bound: float, shape, dtype) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True,
                 group: str = "head", dtype=np.float32):
        bound = 1.0 / math.sqrt(n_in)
        self.weight = Parameter(_uniform(rng, bound, (n_out, n_in), dtype), group)
        self.bias = Parameter(_uniform(rng, bound, (n_out,), dtype), group) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1,
                 padding: int = 0, group: str = "backbone", dtype=np.float32):
        fan_in = c_in * k * k
        self.weight = Parameter(rng.normal(0, math.sqrt(2.0 / fan_in), (c_out, c_in, k, k)).astype(dtype), group)
        self.bias = Parameter(np.zeros(c_out, dtype=dtype), group)
        self.stride, self.padding = stride, padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1,
                 group: str = "backbone", dtype=np.float32):
        fan_in = c_in * k
        self.weight = Parameter(rng.normal(0, math.sqrt(2.0 / fan_in), (c_out, c_in, k)).astype(dtype), group)
        self.bias = Parameter(np.zeros(c_out, dtype=dtype), group)
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv1d(x, self.weight, self.bias, self.stride)


class LayerNorm(Module):
    def __init__(self, d: int, group: str = "head", dtype=np.float32):
        self.gamma = Parameter(np.ones(d, dtype=dtype), group)
        self.beta = Parameter(np.zeros(d, dtype=dtype), group)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta)


class MLP(Module):
    """Stack of Linear layers with ReLU between them (none after the last)."""

    def __init__(self, sizes: list[int], rng: np.random.Generator, group: str = "head", dtype=np.float32):
        self.layers = [Linear(a, b, rng, group=group, dtype=dtype) for a, b in zip(sizes[:-1], sizes[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ops.relu(x)
        return x

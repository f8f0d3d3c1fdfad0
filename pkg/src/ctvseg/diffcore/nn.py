"""Parameters, modules and the handful of layers the networks are built from."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import ops
from .tensor import Tensor


class Parameter(Tensor):
    """Trainable leaf.  ``frozen=True`` makes it a constant for the backward pass."""

    def __init__(self, data, frozen: bool = False, name: str | None = None):
        super().__init__(data, requires_grad=True, frozen=frozen, name=name)

    def set_frozen(self, frozen: bool) -> None:
        self.frozen = frozen
        self.requires_grad = not frozen
        if frozen:
            self.grad = None


class Module:
    """Attribute-walking container: Parameters, Modules and lists of Modules."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())

    def load_state_dict(self, state) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} vs {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def set_frozen(self, frozen: bool) -> None:
        for p in self.parameters():
            p.set_frozen(frozen)

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _kaiming(rng, shape, fan_in, slope=0.01):
    gain = np.sqrt(2.0 / (1 + slope ** 2))
    return rng.standard_normal(shape) * gain / np.sqrt(fan_in)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(_uniform(rng, (d_in, d_out), d_in))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def __call__(self, x):
        return ops.layer_norm(x, self.weight, self.bias)


class InstanceNorm3d(Module):
    def __init__(self, channels: int):
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))

    def __call__(self, x):
        return ops.instance_norm(x, self.weight, self.bias)


class Conv3d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int | None = None, bias: bool = True):
        fan_in = c_in * kernel ** 3
        self.weight = Parameter(_kaiming(rng, (c_out, c_in, kernel, kernel, kernel), fan_in))
        self.bias = Parameter(np.zeros(c_out)) if bias else None
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding

    def __call__(self, x):
        return ops.conv3d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose3d(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, factor: int = 2):
        self.weight = Parameter(_kaiming(rng, (c_in, c_out, factor, factor, factor), c_in))
        self.bias = Parameter(np.zeros(c_out))
        self.factor = factor

    def __call__(self, x):
        return ops.conv_transpose3d(x, self.weight, self.bias, stride=self.factor)

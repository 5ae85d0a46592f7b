"""Parameter containers shared by every layer type."""

from __future__ import annotations

import dataclasses

import numpy as np

from .autodiff import Tensor, parameter, reshape


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    shape = (fan_in, fan_out) if shape is None else shape
    total = fan_in + fan_out
    a = np.sqrt(6.0 / total) if total else 0.0
    return rng.uniform(-a, a, size=shape)


def zeros(*shape) -> Tensor:
    return parameter(np.zeros(shape))


def ones(*shape) -> Tensor:
    return parameter(np.ones(shape))


class ParamGroup:
    """Mixin for dataclasses whose Tensor fields are trainable parameters.

    Fields are visited in declaration order; nested groups and lists of
    groups are flattened with dotted names.
    """

    def named_parameters(self, prefix: str = ""):
        out = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            name = f"{prefix}{f.name}"
            if isinstance(value, Tensor):
                out.append((name, value))
            elif isinstance(value, ParamGroup):
                out.extend(value.named_parameters(name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, ParamGroup):
                        out.extend(item.named_parameters(f"{name}.{i}."))
        return out

    def parameters(self) -> list:
        return [t for _, t in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self.parameters()))


@dataclasses.dataclass
class Linear(ParamGroup):
    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, rng, d_in: int, d_out: int) -> "Linear":
        return cls(parameter(glorot(rng, d_in, d_out)), zeros(d_out))

    def __call__(self, x):
        if x.ndim == 1:
            return reshape(reshape(x, (1, -1)) @ self.weight + self.bias, (-1,))
        return x @ self.weight + self.bias


@dataclasses.dataclass
class LayerNormParams(ParamGroup):
    gain: Tensor
    bias: Tensor

    @classmethod
    def init(cls, d: int) -> "LayerNormParams":
        return cls(ones(d), zeros(d))

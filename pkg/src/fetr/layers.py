"""Parameter containers shared by the attention modules and the backbone."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .ops import batch_norm
from .tensor import Tensor


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    std = np.sqrt(2.0 / fan_in)
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)


def zeros_param(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def full_param(shape, value, dtype) -> Tensor:
    return Tensor(np.full(shape, value, dtype=dtype), requires_grad=True)


@dataclass
class BatchNorm:
    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor

    @classmethod
    def create(cls, channels: int, dtype=np.float32, gamma: float = 1.0) -> "BatchNorm":
        return cls(
            gamma=full_param((channels,), gamma, dtype),
            beta=zeros_param((channels,), dtype),
            running_mean=Tensor(np.zeros(channels, dtype=dtype)),
            running_var=Tensor(np.ones(channels, dtype=dtype)),
        )

    def __call__(self, x, training: bool) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var, training)


def named_tensors(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Yield ``(dotted_name, tensor)`` for every tensor reachable from ``obj``.

    Walks dataclass fields in declaration order, sequences by index and
    mappings by sorted key. ``None`` entries are skipped.
    """
    if obj is None:
        return
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from named_tensors(getattr(obj, f.name), _join(prefix, f.name))
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_tensors(item, _join(prefix, str(i)))
    elif isinstance(obj, dict):
        for key in sorted(obj):
            yield from named_tensors(obj[key], _join(prefix, str(key)))


def named_parameters(obj, prefix: str = ""):
    return [(n, t) for n, t in named_tensors(obj, prefix) if t.requires_grad]


def named_buffers(obj, prefix: str = ""):
    return [(n, t) for n, t in named_tensors(obj, prefix) if not t.requires_grad]


def num_parameters(obj) -> int:
    return sum(t.size for _, t in named_parameters(obj))


def _join(prefix, name):
    return f"{prefix}.{name}" if prefix else name

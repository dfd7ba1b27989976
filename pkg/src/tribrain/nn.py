"""Parameter containers built on the tensor engine."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .numerics import Tensor, ops


class Module:
    """Holds parameter tensors and sub-modules; names follow attribute paths."""

    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in list(vars(self).items()):
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for val in list(vars(self).values()):
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

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def param(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


class Linear(Module):
    """y = x @ W + b with W stored as [in, out]."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, zero: bool = False, scale: float = 1.0):
        bound = scale / np.sqrt(n_in)
        w = np.zeros((n_in, n_out)) if zero else rng.uniform(-bound, bound, size=(n_in, n_out))
        self.weight = param(w)
        self.bias = param(np.zeros(n_out))

    @property
    def n_in(self) -> int:
        return self.weight.shape[0]

    @property
    def n_out(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise ops.ShapeError(f"Linear expects last dim {self.n_in}, got input {x.shape}")
        return x @ self.weight + self.bias


class LayerNorm(Module):
    """Normalise over ``axis`` (last by default), then a gain and shift over the last axis."""

    def __init__(self, n: int, eps: float = 1e-5, axis=-1):
        self.gain = param(np.ones(n))
        self.shift = param(np.zeros(n))
        self.eps = eps
        self.axis = axis

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layernorm(x, axis=self.axis, eps=self.eps) * self.gain + self.shift

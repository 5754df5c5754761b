"""Parameter containers and dense layers built on :mod:`evtol_tdrl.autodiff`."""

from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Base class collecting :class:`Tensor` parameters by attribute name.

    Parameters are discovered in attribute-definition order, recursing into
    sub-modules and lists of sub-modules, so names are stable across runs.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data[...] = arr

    def copy_from(self, other: "Module") -> None:
        for p, q in zip(self.parameters(), other.parameters()):
            p.data[...] = q.data


def param(data: np.ndarray, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


class Linear(Module):
    """Affine map ``x @ W + b`` with PyTorch-style uniform initialization."""

    def __init__(
        self,
        n_in: int,
        n_out: int,
        rng: np.random.Generator,
        bias: bool = True,
        zero_init: bool = False,
    ) -> None:
        bound = 1.0 / np.sqrt(n_in)
        if zero_init:
            w = np.zeros((n_in, n_out))
        else:
            w = rng.uniform(-bound, bound, size=(n_in, n_out))
        self.weight = param(w)
        if bias:
            b = np.zeros(n_out) if zero_init else rng.uniform(-bound, bound, size=n_out)
            self.bias = param(b)
        else:
            self.bias = None

    def __call__(self, x) -> Tensor:
        y = ad.matmul(x, self.weight)
        return y if self.bias is None else ad.add(y, self.bias)


class MLP(Module):
    """Stack of ReLU hidden layers followed by a linear output layer."""

    def __init__(
        self,
        n_in: int,
        hidden: Sequence[int],
        n_out: int,
        rng: np.random.Generator,
        zero_last: bool = False,
    ) -> None:
        sizes = [n_in, *hidden]
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self.out = Linear(sizes[-1], n_out, rng, zero_init=zero_last)

    def __call__(self, x) -> Tensor:
        h = x
        for layer in self.layers:
            h = ad.relu(layer(h))
        return self.out(h)

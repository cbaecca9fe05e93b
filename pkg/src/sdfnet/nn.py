"""Small module system on top of :mod:`sdfnet.tensor`."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np
from scipy.stats import truncnorm

from .tensor import Parameter, Tensor, layer_norm, matmul


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    # truncated at +-2 std, as in common ViT inits
    return truncnorm.rvs(-2.0, 2.0, loc=0.0, scale=std, size=shape, random_state=rng)


class Module:
    def __init__(self):
        self._params: "OrderedDict[str, Parameter]" = OrderedDict()
        self._children: "OrderedDict[str, Module]" = OrderedDict()

    def add_param(self, name: str, data: np.ndarray, dtype) -> Parameter:
        p = Parameter(data, name=name, dtype=dtype)
        self._params[name] = p
        return p

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data) for n, p in self.named_parameters())

    def load_state_dict(self, state: dict) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng, dtype=np.float32, bias: bool = True,
                 init: np.ndarray | None = None):
        super().__init__()
        w = trunc_normal(rng, (n_in, n_out)) if init is None else init
        self.weight = self.add_param("weight", w, dtype)
        self.bias = self.add_param("bias", np.zeros(n_out), dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-6):
        super().__init__()
        self.eps = eps
        self.weight = self.add_param("weight", np.ones(dim), dtype)
        self.bias = self.add_param("bias", np.zeros(dim), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.weight, self.bias, self.eps)


class BatchNorm1d(Module):
    """Batch-statistics normalisation with a learnable scale and no shift."""

    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = self.add_param("weight", np.ones(dim), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=0, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=0, keepdims=True)
        return xc / (var + self.eps).sqrt() * self.weight

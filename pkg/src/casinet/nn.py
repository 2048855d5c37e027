"""Minimal parameter containers and conv/BN building blocks."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import ops
from .autograd import Param, Var
from .tensor import Rng


class Module:
    """Registers Params, child Modules and lists of them in attribute order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Param]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Param):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Param):
                        yield f"{name}.{i}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Param]:
        return [p for _, p in self.named_parameters()]

    def named_bn_states(self, prefix: str = "") -> Iterator[tuple[str, ops.BatchNormState]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, ops.BatchNormState):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_bn_states(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_bn_states(f"{name}.{i}.")

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


def kaiming(rng: Rng, shape, fan_in: int) -> np.ndarray:
    return rng.normal(shape, math.sqrt(2.0 / fan_in))


class Conv3x3(Module):
    def __init__(self, cin: int, cout: int, rng: Rng, dilation: int = 1, bias: bool = False):
        self.dilation = dilation
        self.weight = Param(kaiming(rng, (cout, cin, 3, 3), cin * 9))
        self.bias = Param(np.zeros(cout)) if bias else None

    def forward(self, x: Var) -> Var:
        return ops.conv2d(x, self.weight, self.bias, dilation=self.dilation)


class Conv1x1(Module):
    def __init__(self, cin: int, cout: int, rng: Rng, bias: bool = False):
        self.weight = Param(kaiming(rng, (cout, cin, 1, 1), cin))
        self.bias = Param(np.zeros(cout)) if bias else None

    def forward(self, x: Var) -> Var:
        return ops.conv1x1(x, self.weight, self.bias)


class BatchNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.9, gamma_init: float = 1.0):
        self.gamma = Param(np.full(channels, float(gamma_init)), decay=False)
        self.beta = Param(np.zeros(channels), decay=False)
        self.state = ops.BatchNormState(channels, momentum)
        self.eps = eps

    def forward(self, x: Var, mode: str) -> Var:
        return ops.batchnorm(x, self.gamma, self.beta, mode=mode, eps=self.eps, state=self.state)


class ConvBNReLU(Module):
    """3x3 (dilated) conv, no bias, then BN, then ReLU."""

    def __init__(self, cin: int, cout: int, rng: Rng, dilation: int = 1):
        self.conv = Conv3x3(cin, cout, rng, dilation=dilation)
        self.bn = BatchNorm(cout)

    def forward(self, x: Var, mode: str) -> Var:
        return ops.relu(self.bn.forward(self.conv.forward(x), mode))


def name_parameters(module: Module) -> None:
    """Stamp each Param with its dotted attribute path (used in reports and checkpoints)."""
    for name, p in module.named_parameters():
        p.name = name

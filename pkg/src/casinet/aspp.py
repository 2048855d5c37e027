"""Parallel dilated-convolution branches producing the multi-scale stack."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .autograd import Var
from .config import ModelConfig
from .nn import ConvBNReLU, Module
from .tensor import Rng, Tensor


@dataclass
class ScaleStack:
    """K same-shaped feature maps held as one (N, K, C, H, W) variable."""

    data: Var
    dilations: tuple[int, ...] = ()

    def __post_init__(self):
        if self.data.data.ndim != 5:
            raise ops.ShapeError(f"scale stack must be (N, K, C, H, W), got {self.data.shape}")
        if self.dilations and len(self.dilations) != self.K:
            raise ops.ShapeError("one dilation per scale expected")

    @classmethod
    def from_list(cls, scales, dilations=()) -> "ScaleStack":
        return cls(ops.stack([s if isinstance(s, Var) else Var(s) for s in scales], axis=1), tuple(dilations))

    @property
    def K(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        n, _, c, h, w = self.data.shape
        return (n, c, h, w)

    @property
    def scales(self) -> list[Tensor]:
        return [Tensor(self.data.data[:, k]) for k in range(self.K)]

    def array(self) -> np.ndarray:
        return self.data.data


class AsppParams(Module):
    """One conv + BN group per branch; nothing shared across branches."""

    def __init__(self, cin: int, cout: int, dilations, rng: Rng):
        self.dilations = tuple(dilations)
        self.branches = [ConvBNReLU(cin, cout, rng.child(k), dilation=d) for k, d in enumerate(self.dilations)]


def aspp_forward(feature: Var, params: AsppParams, cfg: ModelConfig | None = None, mode: str = "train") -> ScaleStack:
    feature = feature if isinstance(feature, Var) else Var(feature)
    cin = params.branches[0].conv.weight.shape[1]
    if feature.shape[1] != cin:
        raise ops.ShapeError(f"channel mismatch: feature has {feature.shape[1]}, ASPP expects {cin}")
    outs = [b.forward(feature, mode) for b in params.branches]
    return ScaleStack(ops.stack(outs, axis=1), params.dilations)

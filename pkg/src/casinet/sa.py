"""Scale adaptation: per-position, per-channel attention over scales and weighted fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .aspp import ScaleStack
from .autograd import Var
from .config import ModelConfig
from .nn import BatchNorm, Conv1x1, Module
from .tensor import Rng


def bottleneck_width(K: int, channels: int, reduction: int) -> int:
    return max(1, (K * channels) // reduction)


class SaParams(Module):
    """Bottleneck ``W`` (K*C -> K*C/r, BN) and K heads ``W_k`` (-> C or 1, BN).

    The K heads are held as one 1x1 conv with K*C' outputs; output block k is head k.
    """

    def __init__(self, channels: int, cfg: ModelConfig, rng: Rng):
        self.K = cfg.K
        self.channels = channels
        self.head_width = 1 if cfg.sa_channel_shared else channels
        hidden = bottleneck_width(cfg.K, channels, cfg.reduction)
        self.squeeze = Conv1x1(cfg.K * channels, hidden, rng.child(0))
        self.squeeze_bn = BatchNorm(hidden)
        self.heads = Conv1x1(hidden, cfg.K * self.head_width, rng.child(1))
        self.heads_bn = BatchNorm(cfg.K * self.head_width)


@dataclass
class AttentionField:
    """Attention values indexed (N, K, C, H, W)."""

    alpha: Var

    def channel_mean(self) -> np.ndarray:
        """(N, K, H, W) attention averaged along channels."""
        return self.alpha.data.mean(axis=2)


def sa_attention(stack: ScaleStack, params: SaParams, cfg: ModelConfig, mode: str = "train") -> AttentionField:
    n, K, c, h, w = stack.data.shape
    if K != params.K or c != params.channels:
        raise ops.ShapeError(f"SA built for K={params.K}, C={params.channels}; stack has K={K}, C={c}")
    s = ops.reshape(stack.data, (n, K * c, h, w))
    hidden = ops.relu(params.squeeze_bn.forward(params.squeeze.forward(s), mode))
    logits = params.heads_bn.forward(params.heads.forward(hidden), mode)
    logits = ops.reshape(logits, (n, K, params.head_width, h, w))
    if cfg.sa_activation == "sigmoid":
        alpha = ops.sigmoid(logits)
    else:
        alpha = ops.softmax_over_scales(logits)
    if params.head_width != c:
        alpha = ops.broadcast_to(alpha, (n, K, c, h, w))
    return AttentionField(alpha)


def sa_fuse(stack: ScaleStack, att: AttentionField) -> Var:
    """(1/K) * sum_k alpha_k * s_k -> (N, C, H, W)."""
    if att.alpha.shape != stack.data.shape:
        raise ops.ShapeError(f"attention {att.alpha.shape} does not match stack {stack.data.shape}")
    return ops.mean(ops.mul(att.alpha, stack.data), axis=1)

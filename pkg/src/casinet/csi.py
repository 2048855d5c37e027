"""Contextual scale interaction: per-position non-local mixing across the K scales.

At each position the K scale features form a small graph.  The affinity from
target scale k to source scale m is ``exp(theta_k(x_k, k) . phi_m(x_m, m))``;
each row is normalized and the refined feature of scale k is the resulting
convex combination of all scale features at that position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .aspp import ScaleStack
from .autograd import Param, Var
from .config import ModelConfig
from .nn import BatchNorm, Module, kaiming
from .tensor import Rng

OVERFLOW_LIMIT = 500.0


class AffinityOverflow(ArithmeticError):
    pass


def embed_width(channels: int, K: int, scale_index: bool) -> int:
    return max(1, (channels + (K if scale_index else 0)) // 2)


def scale_index_planes(n: int, K: int, h: int, w: int) -> np.ndarray:
    """(N, K, K, H, W) constant: for scale k, channel k is ones and the rest zeros."""
    planes = np.zeros((n, K, K, h, w))
    for k in range(K):
        planes[:, k, k] = 1.0
    return planes


def embed_with_scale_index(x_k, k: int, cfg: ModelConfig) -> Var:
    """Input of the scale-k embedding: ``x_k`` with K one-hot planes appended when enabled."""
    x_k = x_k if isinstance(x_k, Var) else Var(x_k)
    if not 0 <= k < cfg.K:
        raise IndexError(f"scale index {k} out of range for K={cfg.K}")
    if not cfg.scale_index:
        return x_k
    n, _, h, w = x_k.shape
    planes = np.zeros((n, cfg.K, h, w))
    planes[:, k] = 1.0
    return ops.concat([x_k, Var(planes)], axis=1)


class ScaleEmbedding(Module):
    """1x1 conv + BN + ReLU applied to every scale of an (N, K, Cin, H, W) stack.

    Individual mode keeps K independent groups (weight shape (K, Cout, Cin), BN
    statistics per scale); shared mode applies one group to all scales and pools
    the BN statistics across them.

    BN scales start at ``cout ** -0.25`` so that theta . phi initially has the
    spread of a 1/sqrt(D)-scaled dot product and stays clear of the overflow guard.
    """

    def __init__(self, K: int, cin: int, cout: int, rng: Rng, shared: bool = False):
        self.K, self.cin, self.cout, self.shared = K, cin, cout, shared
        if shared:
            self.weight = Param(kaiming(rng, (cout, cin), cin))
            self.bn = BatchNorm(cout, gamma_init=cout ** -0.25)
        else:
            self.weight = Param(kaiming(rng, (K, cout, cin), cin))
            self.bn = BatchNorm(K * cout, gamma_init=cout ** -0.25)

    def forward(self, x: Var, mode: str) -> Var:
        n, K, c, h, w = x.shape
        if c != self.cin:
            raise ops.ShapeError(f"embedding expects {self.cin} channels, got {c}")
        if not self.shared and K != self.K:
            raise ops.ShapeError(f"embedding built for K={self.K}, got {K}")
        # (K, D, C) or (D, C) @ (N, K, C, HW) -> (N, K, D, HW)
        y = ops.matmul(self.weight, ops.reshape(x, (n, K, c, h * w)))
        y = ops.reshape(y, (n * K, self.cout, h, w) if self.shared else (n, K * self.cout, h, w))
        y = ops.relu(self.bn.forward(y, mode))
        return ops.reshape(y, (n, K, self.cout, h, w))


class CsiParams(Module):
    def __init__(self, channels: int, cfg: ModelConfig, rng: Rng):
        self.channels = channels
        cin = channels + (cfg.K if cfg.scale_index else 0)
        d = embed_width(channels, cfg.K, cfg.scale_index)
        self.theta = ScaleEmbedding(cfg.K, cin, d, rng.child(0), shared=cfg.shared_embedding)
        self.phi = ScaleEmbedding(cfg.K, cin, d, rng.child(1), shared=cfg.shared_embedding)


@dataclass
class AffinityField:
    """Per-position K x K affinities, indexed (N, H, W, k_target, m_source)."""

    logits: Var
    weights: Var

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.logits.data)

    @property
    def normalized(self) -> np.ndarray:
        return self.weights.data


def embedding_input(stack: ScaleStack, cfg: ModelConfig) -> Var:
    if not cfg.scale_index:
        return stack.data
    n, K, _, h, w = stack.data.shape
    return ops.concat([stack.data, Var(scale_index_planes(n, K, h, w))], axis=2)


def affinity_from_embeddings(theta, phi) -> AffinityField:
    """Dot products of (N, K, D, H, W) embeddings, exponentiated and row-normalized."""
    theta = theta if isinstance(theta, Var) else Var(theta)
    phi = phi if isinstance(phi, Var) else Var(phi)
    if theta.shape != phi.shape:
        raise ops.ShapeError(f"theta {theta.shape} and phi {phi.shape} differ")
    n, K, d, h, w = theta.shape
    t = ops.transpose(theta, (0, 3, 4, 1, 2))  # (N, H, W, K, D)
    p = ops.transpose(phi, (0, 3, 4, 2, 1))  # (N, H, W, D, K)
    logits = ops.matmul(t, p)
    if np.abs(logits.data).max() > OVERFLOW_LIMIT:
        raise AffinityOverflow("affinity overflow; reduce initialization scale")
    # exp(dot) / sum_m exp(dot) evaluated in the max-shifted (softmax) form
    weights = ops.softmax(logits, axis=-1)
    return AffinityField(logits, weights)


def compute_affinity(stack: ScaleStack, params: CsiParams, cfg: ModelConfig, mode: str = "train") -> AffinityField:
    x = embedding_input(stack, cfg)
    return affinity_from_embeddings(params.theta.forward(x, mode), params.phi.forward(x, mode))


def csi_refine(stack: ScaleStack, aff: AffinityField) -> ScaleStack:
    n, K, _, h, w = stack.data.shape
    if aff.weights.shape != (n, h, w, K, K):
        raise ops.ShapeError(f"affinity {aff.weights.shape} does not match stack {stack.data.shape}")
    x = ops.transpose(stack.data, (0, 3, 4, 1, 2))  # (N, H, W, K, C)
    refined = ops.transpose(ops.matmul(aff.weights, x), (0, 3, 4, 1, 2))
    return ScaleStack(refined, stack.dilations)


def csi_forward(stack: ScaleStack, params: CsiParams, cfg: ModelConfig, mode: str = "train",
                capture: dict | None = None) -> ScaleStack:
    aff = compute_affinity(stack, params, cfg, mode)
    if capture is not None:
        capture["affinity"] = aff
    out = csi_refine(stack, aff)
    if cfg.csi_residual:
        out = ScaleStack(ops.add(out.data, stack.data), stack.dilations)
    return out

"""Segmentation losses."""

from __future__ import annotations

import numpy as np

from . import ops
from .autograd import Var
from .config import LossConfig

WEIGHT_CLIP = (0.1, 10.0)


def balanced_class_weights(frequencies) -> np.ndarray:
    """Inverse class frequency, scaled so uniform classes get weight 1, clipped to [0.1, 10]."""
    freq = np.asarray(frequencies, dtype=np.float64)
    k = freq.size
    with np.errstate(divide="ignore"):
        w = np.where(freq > 0, 1.0 / (k * freq), WEIGHT_CLIP[1])
    return np.clip(w, *WEIGHT_CLIP)


def resolve_class_weights(cfg: LossConfig, num_classes: int, frequencies=None) -> np.ndarray:
    if cfg.class_weights == "none":
        return np.ones(num_classes)
    if cfg.class_weights == "auto":
        if frequencies is None:
            raise ValueError("auto class weights need training-set class frequencies")
        return balanced_class_weights(frequencies)
    w = np.asarray(cfg.class_weights, dtype=np.float64)
    if w.shape != (num_classes,):
        raise ValueError(f"expected {num_classes} class weights, got {w.size}")
    return w


def ce_loss(logits: Var, labels, cfg: LossConfig, class_weights=None) -> Var:
    return ops.cross_entropy(logits, labels, class_weights, cfg.ignore_label, cfg.ohem_keep_fraction)


def ohem_mean(losses, keep_fraction: float, weights=None) -> float:
    """Weighted mean of the hardest ``keep_fraction`` of a flat loss vector."""
    losses = np.asarray(losses, dtype=np.float64).reshape(-1)
    w = np.ones_like(losses) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    mask = ops.ohem_mask(losses, keep_fraction)
    return float((w * losses * mask).sum() / (w * mask).sum())


def total_loss(main, aux, aux_weight: float):
    if aux_weight < 0:
        raise ValueError("aux_weight must be >= 0")
    if isinstance(main, Var) or isinstance(aux, Var):
        if aux_weight == 0:
            return main
        return ops.add(main, ops.scale(aux, aux_weight))
    return main + aux_weight * aux

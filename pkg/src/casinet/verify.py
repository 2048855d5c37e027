"""Gradient-check suites for every differentiable op and for the full model + loss."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import ops
from .autograd import Param, Var
from .config import LossConfig, ModelConfig
from .gradcheck import GradReport, gradcheck
from .losses import ce_loss, total_loss
from .model import SegModel
from .tensor import Rng


def _away_from_zero(a: np.ndarray, margin: float = 0.05) -> np.ndarray:
    """Push values off the ReLU kink so central differences stay one-sided-free."""
    return np.where(np.abs(a) < margin, np.sign(a + 1e-300) * margin + a, a)


def _projected(out: Var, proj: np.ndarray) -> Var:
    """Random linear functional of ``out`` so every output coordinate matters."""
    return ops.sum_all(ops.mul(out, proj))


def op_cases(rng: Rng) -> dict[str, tuple[Callable[[], Var], list[Param]]]:
    """Named (loss builder, params) pairs covering each differentiable primitive."""
    g = rng.generator

    def P(*shape, scale=1.0):
        return Param(g.normal(0.0, scale, shape))

    cases: dict[str, tuple[Callable[[], Var], list[Param]]] = {}

    def unary(name, fn, x, out_shape=None):
        proj = g.normal(size=out_shape or fn(Var(x.data)).shape)
        cases[name] = (lambda: _projected(fn(x), proj), [x])

    a, b = P(2, 3, 4, 4), P(1, 3, 1, 4)
    pa = g.normal(size=(2, 3, 4, 4))
    cases["add"] = (lambda: _projected(ops.add(a, b), pa), [a, b])
    c, d = P(2, 3, 4, 4), P(2, 1, 4, 4)
    cases["mul"] = (lambda: _projected(ops.mul(c, d), pa), [c, d])
    unary("scale", lambda x: ops.scale(x, -1.7), P(2, 3, 4, 4))
    unary("relu", ops.relu, Param(_away_from_zero(g.normal(size=(2, 3, 4, 4)))))
    unary("sigmoid", ops.sigmoid, P(2, 3, 4, 4, scale=2.0))
    unary("exp", ops.exp, P(2, 3, 4, 4, scale=0.5))
    unary("softmax", lambda x: ops.softmax(x, axis=-1), P(2, 4, 3, 5))
    unary("softmax_over_scales", ops.softmax_over_scales, P(2, 3, 2, 3, 3))
    unary("reshape", lambda x: ops.reshape(x, (6, 16)), P(2, 3, 4, 4))
    unary("broadcast_to", lambda x: ops.broadcast_to(x, (2, 3, 4, 4)), P(2, 1, 4, 1))
    e, f = P(2, 3, 4, 4), P(2, 2, 4, 4)
    pc = g.normal(size=(2, 5, 4, 4))
    cases["concat"] = (lambda: _projected(ops.concat([e, f], axis=1), pc), [e, f])
    s1, s2 = P(2, 3, 4, 4), P(2, 3, 4, 4)
    ps = g.normal(size=(2, 2, 3, 4, 4))
    cases["stack"] = (lambda: _projected(ops.stack([s1, s2], axis=1), ps), [s1, s2])
    unary("take", lambda x: ops.take(x, 1, axis=1), P(2, 3, 2, 4, 4))
    unary("mean", lambda x: ops.mean(x, axis=1), P(2, 3, 4, 4))
    unary("spatial_mean", ops.spatial_mean, P(2, 3, 4, 4))
    sa_ = P(2, 3, 4, 4)
    cases["sum_all"] = (lambda: ops.sum_all(ops.mul(sa_, sa_)), [sa_])
    ea, eb = P(2, 3, 5), P(2, 5, 4)
    pe = g.normal(size=(2, 3, 4))
    cases["einsum"] = (lambda: _projected(ops.einsum("nij,njk->nik", ea, eb), pe), [ea, eb])
    ma, mb = P(2, 3, 3, 5), P(5, 4)
    pm = g.normal(size=(2, 3, 3, 4))
    cases["matmul"] = (lambda: _projected(ops.matmul(ma, mb), pm), [ma, mb])
    unary("transpose", lambda x: ops.transpose(x, (0, 3, 4, 1, 2)), P(2, 3, 2, 3, 4))
    for dil in (1, 2, 3, 7):
        x, w, bias = P(2, 3, 7, 6), P(4, 3, 3, 3, scale=0.4), P(4)
        pw = g.normal(size=(2, 4, 7, 6))
        cases[f"conv2d_d{dil}"] = (
            lambda x=x, w=w, bias=bias, dil=dil, pw=pw: _projected(ops.conv2d(x, w, bias, dil), pw),
            [x, w, bias],
        )
    x1, w1, b1 = P(2, 5, 3, 4), P(3, 5, 1, 1), P(3)
    p1 = g.normal(size=(2, 3, 3, 4))
    cases["conv1x1"] = (lambda: _projected(ops.conv1x1(x1, w1, b1), p1), [x1, w1, b1])
    xb, gb, bb = P(3, 4, 3, 3, scale=2.0), Param(1.0 + 0.3 * g.normal(size=4)), P(4)
    pb = g.normal(size=(3, 4, 3, 3))
    cases["batchnorm_train"] = (lambda: _projected(ops.batchnorm(xb, gb, bb, "train"), pb), [xb, gb, bb])
    st = ops.BatchNormState(4)
    st.running_mean = g.normal(size=4)
    st.running_var = 0.5 + g.random(4)
    cases["batchnorm_eval"] = (lambda: _projected(ops.batchnorm(xb, gb, bb, "eval", state=st), pb), [xb, gb, bb])
    unary("avg_pool2", ops.avg_pool2, P(2, 3, 4, 6))
    unary("upsample_bilinear", lambda x: ops.upsample_bilinear(x, (8, 12)), P(2, 3, 2, 3))
    logits = P(2, 4, 5, 5, scale=2.0)
    labels = g.integers(0, 4, size=(2, 5, 5))
    labels[0, 0, :3] = 255
    cw = 0.5 + g.random(4)
    cases["cross_entropy"] = (lambda: ops.cross_entropy(logits, labels, cw, 255), [logits])
    cases["cross_entropy_ohem"] = (lambda: ops.cross_entropy(logits, labels, cw, 255, keep_fraction=0.3), [logits])
    return cases


def op_gradchecks(seed: int, h: float = 1e-5, tol: float = 1e-4) -> dict[str, GradReport]:
    reports = {}
    for name, (fn, params) in op_cases(Rng(seed, 0x09)).items():
        names = [f"{name}.arg{i}" for i in range(len(params))]
        reports[name] = gradcheck(fn, params, h=h, seed=seed, tol=tol, names=names)
    return reports


def gradcheck_model_config(cfg: ModelConfig | None = None) -> ModelConfig:
    """Small-width copy of ``cfg`` (full CASINet path switched on) for fast gradient checks."""
    cfg = cfg or ModelConfig()
    return cfg.replace(use_aspp=True, use_csi=True, use_sa=True, backbone_channels=6,
                       branch_channels=4, dilations=tuple(cfg.dilations))


def model_loss_fn(model: SegModel, image: np.ndarray, labels: np.ndarray,
                  loss_cfg: LossConfig, class_weights: np.ndarray) -> Callable[[], Var]:
    def f():
        logits, aux = model.forward(image, mode="train")
        main = ce_loss(logits, labels, loss_cfg, class_weights)
        return total_loss(main, ce_loss(aux, labels, loss_cfg, class_weights), model.cfg.aux_weight)
    return f


def model_gradcheck(cfg: ModelConfig | None = None, seeds=(0, 1, 2), size: int = 16, batch: int = 2,
                    h: float = 1e-5, tol: float = 1e-4, max_coords: int = 40) -> list[tuple[int, GradReport]]:
    """Full forward + main/aux cross-entropy gradcheck over every parameter, one report per seed."""
    cfg = gradcheck_model_config(cfg)
    out = []
    for seed in seeds:
        rng = Rng(seed, 0x6C)
        model = SegModel(cfg, seed=seed)
        image = rng.normal((batch, cfg.in_channels, size, size))
        labels = rng.integers(0, cfg.num_classes, size=(batch, size, size))
        weights = 0.5 + rng.random(cfg.num_classes)
        named = list(model.named_parameters())
        f = model_loss_fn(model, image, labels, LossConfig(class_weights="none"), weights)
        rep = gradcheck(f, [p for _, p in named], h=h, seed=seed, max_coords=max_coords, tol=tol,
                        names=[n for n, _ in named])
        out.append((seed, rep))
    return out

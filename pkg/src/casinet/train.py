"""Training loop and evaluation."""

from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass, field

import numpy as np

from .autograd import Tape
from .config import RunConfig
from .data import Dataset, SegSample, class_frequencies
from .losses import ce_loss, resolve_class_weights, total_loss
from .metrics import ConfusionMatrix, miou
from .model import SegModel
from .optim import SGD, poly_lr
from .tensor import Rng

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: SegModel
    losses: list[float] = field(default_factory=list)
    history: list[tuple[int, float, float, float]] = field(default_factory=list)  # iter, lr, loss, val_miou
    class_weights: np.ndarray | None = None


def thread_limit(threads: int):
    """Cap BLAS/OpenMP threads; threads <= 0 leaves the pools untouched."""
    if threads <= 0:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def batch_arrays(samples: list[SegSample], flips=None) -> tuple[np.ndarray, np.ndarray]:
    images = np.concatenate([s.image.data for s in samples], axis=0)
    labels = np.stack([s.labels for s in samples])
    if flips is not None:
        images = np.where(flips[:, None, None, None], images[..., ::-1], images)
        labels = np.where(flips[:, None, None], labels[..., ::-1], labels)
    return images, labels


def predict(model: SegModel, images: np.ndarray) -> np.ndarray:
    logits, _ = model.forward(images, mode="eval")
    return logits.data.argmax(axis=1)


def evaluate(model: SegModel, samples: list[SegSample], batch_size: int = 8,
             ignore_label: int = 255) -> dict:
    cm = ConfusionMatrix(model.cfg.num_classes, ignore_label)
    for i in range(0, len(samples), batch_size):
        images, labels = batch_arrays(samples[i:i + batch_size])
        cm.update(predict(model, images), labels)
    per_class, mean = miou(cm)
    return {"per_class_iou": per_class, "miou": mean, "pixel_acc": cm.pixel_accuracy()}


def train_step(model: SegModel, opt: SGD, images, labels, run: RunConfig, class_weights, lr: float) -> float:
    with Tape() as tape:
        logits, aux = model.forward(images, mode="train")
        main = ce_loss(logits, labels, run.loss, class_weights)
        aux_l = ce_loss(aux, labels, run.loss, class_weights)
        loss = total_loss(main, aux_l, model.cfg.aux_weight)
        tape.backward(loss)
    opt.step(lr)
    opt.zero_grad()
    return float(loss.data)


def train(run: RunConfig, dataset: Dataset, model: SegModel | None = None, progress=None) -> TrainResult:
    cfg = run.model
    if model is None:
        model = SegModel(cfg, seed=run.seed)
    freqs = class_frequencies(dataset.train, cfg.num_classes)
    weights = resolve_class_weights(run.loss, cfg.num_classes, freqs)
    opt = SGD(model.parameters(), momentum=run.optim.momentum, weight_decay=run.optim.weight_decay)
    rng = Rng(run.seed, 0xBA7C)
    result = TrainResult(model, class_weights=weights)
    n = len(dataset.train)
    order = rng.generator.permutation(n)
    pos = 0
    total = run.optim.total_iters
    window: list[float] = []
    for it in range(total):
        if pos + run.batch_size > n:
            order, pos = rng.generator.permutation(n), 0
        idx = order[pos:pos + run.batch_size]
        pos += run.batch_size
        flips = rng.random(len(idx)) < 0.5 if run.flip else None
        images, labels = batch_arrays([dataset.train[i] for i in idx], flips)
        lr = poly_lr(it, run.optim)
        loss = train_step(model, opt, images, labels, run, weights, lr)
        result.losses.append(loss)
        window.append(loss)
        last = it + 1 == total
        if (run.eval_interval and (it + 1) % run.eval_interval == 0) or last:
            val = evaluate(model, dataset.val, run.batch_size, run.loss.ignore_label)["miou"] if dataset.val else float("nan")
            result.history.append((it + 1, lr, float(np.mean(window)), val))
            log.info("iter %d lr %.5f loss %.4f val_miou %.4f", it + 1, lr, np.mean(window), val)
            window = []
        if progress is not None:
            progress(it, loss)
    return result


def history_csv(result: TrainResult) -> str:
    lines = ["iter,lr,train_loss,val_miou"]
    lines += [f"{i},{lr:.8g},{loss:.10g},{m:.10g}" for i, lr, loss, m in result.history]
    return "\n".join(lines) + "\n"

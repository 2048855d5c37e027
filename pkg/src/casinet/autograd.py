"""Tape-based reverse-mode differentiation over numpy arrays.

Operations executed while a :class:`Tape` is active are recorded in execution
order; :meth:`Tape.backward` replays them in exact reverse order.  Outside a
tape, operations simply compute values.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor

_ACTIVE: list["Tape"] = []


class Var:
    """A value flowing through the graph; ``data`` may have any rank."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def tensor(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self):
        return f"{type(self).__name__}(shape={self.data.shape})"


class Param(Var):
    """Trainable value; ``decay`` marks whether weight decay applies."""

    __slots__ = ("name", "decay")

    def __init__(self, data, name: str = "", decay: bool = True):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name
        self.decay = decay
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)


def as_var(x) -> Var:
    if isinstance(x, Var):
        return x
    return Var(x)


class Tape:
    def __init__(self):
        self.nodes: list[tuple[Var, tuple[Var, ...], Callable]] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def backward(self, loss: Var, seed_grad=None) -> None:
        if seed_grad is None:
            if loss.data.size != 1:
                raise ValueError("backward from a non-scalar needs an explicit seed gradient")
            seed_grad = np.ones_like(loss.data)
        loss.grad = np.asarray(seed_grad, dtype=np.float64)
        touched: list[Param] = []
        for out, parents, fn in reversed(self.nodes):
            g = out.grad
            if g is None:
                continue
            grads = fn(g)
            for p, pg in zip(parents, grads):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.data.shape:
                    raise RuntimeError(f"gradient shape {pg.shape} != value shape {p.data.shape}")
                if p.grad is None:
                    p.grad = np.array(pg, dtype=np.float64)
                else:
                    p.grad = p.grad + pg
                if isinstance(p, Param):
                    touched.append(p)
            if not isinstance(out, Param):
                out.grad = None
        for p in touched:
            if not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"non-finite gradient for parameter {p.name!r}")


def record(out_data, parents: Sequence[Var], backward: Callable) -> Var:
    """Wrap ``out_data`` as a Var and register ``backward`` on the active tape.

    ``backward(grad_out)`` must return one gradient (or None) per parent.
    """
    parents = tuple(parents)
    needs = bool(_ACTIVE) and any(p.requires_grad for p in parents)
    out = Var(out_data, requires_grad=needs)
    if needs:
        _ACTIVE[-1].nodes.append((out, parents, backward))
    return out


def is_recording() -> bool:
    return bool(_ACTIVE)

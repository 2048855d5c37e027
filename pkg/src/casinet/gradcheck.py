"""Central-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autograd import Tape, Var
from .tensor import Rng


@dataclass
class GradEntry:
    param: str
    coord: tuple
    analytic: float
    numeric: float
    rel_err: float

    def line(self) -> str:
        coord = ",".join(str(c) for c in self.coord)
        return f"{self.param} {coord} {self.analytic:.12e} {self.numeric:.12e} {self.rel_err:.3e}"


@dataclass
class GradReport:
    entries: list[GradEntry] = field(default_factory=list)
    tol: float = 1e-4

    @property
    def max_rel_err(self) -> float:
        return max((e.rel_err for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def lines(self) -> list[str]:
        return [e.line() for e in self.entries]

    def text(self) -> str:
        return "\n".join(self.lines()) + "\n"


def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(1.0, abs(a), abs(n))


def _scalar(v: Var) -> float:
    val = float(np.asarray(v.data).reshape(()))
    if not np.isfinite(val):
        raise FloatingPointError("non-finite value during gradcheck")
    return val


def gradcheck(f: Callable[[], Var], params: Sequence[Var], h: float = 1e-5, seed: int = 0,
              max_coords: int = 200, tol: float = 1e-4, names: Sequence[str] | None = None) -> GradReport:
    """Compare analytic gradients of scalar ``f()`` against central differences.

    At most ``max_coords`` randomly chosen coordinates are probed per parameter.
    ``f`` must be deterministic and rebuild its graph on each call.
    """
    if not h > 0:
        raise ValueError("step h must be positive")
    for p in params:
        p.data = np.ascontiguousarray(p.data)
        p.grad = None
    with Tape() as tape:
        out = f()
        _scalar(out)
        tape.backward(out)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = Rng(seed)
    report = GradReport(tol=tol)
    for i, p in enumerate(params):
        name = names[i] if names else getattr(p, "name", "") or f"param{i}"
        size = p.data.size
        if size <= max_coords:
            flat = np.arange(size)
        else:
            flat = np.sort(rng.generator.choice(size, max_coords, replace=False))
        view = p.data.reshape(-1)
        for j in flat:
            orig = view[j]
            view[j] = orig + h
            fp = _scalar(f())
            view[j] = orig - h
            fm = _scalar(f())
            view[j] = orig
            num = (fp - fm) / (2 * h)
            a = float(analytic[i].reshape(-1)[j])
            coord = tuple(int(c) for c in np.unravel_index(j, p.data.shape))
            report.entries.append(GradEntry(name, coord, a, num, relative_error(a, num)))
    for p, g in zip(params, analytic):
        p.grad = g
    return report

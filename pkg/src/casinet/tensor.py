"""Dense rank-4 tensors, seeded random streams and the ``.ten`` file format."""

from __future__ import annotations

import os
import struct
from typing import Sequence

import numpy as np

MAGIC = b"CASINET-TENSOR\x00\x00"  # 16 bytes
VERSION = 1
_HEADER = struct.Struct("<16sI")
_DIMS = struct.Struct("<4Q")


class TensorError(ValueError):
    pass


class CorruptTensorFile(TensorError):
    pass


class Shape(tuple):
    """Four non-negative dims ``(N, C, H, W)``; zero-sized dims are rejected."""

    def __new__(cls, dims: Sequence[int]):
        dims = tuple(int(d) for d in dims)
        if len(dims) != 4:
            raise TensorError(f"shape must have 4 dims, got {len(dims)}")
        if any(d < 0 for d in dims):
            raise TensorError(f"negative dimension in {dims}")
        if any(d == 0 for d in dims):
            raise TensorError(f"zero-sized dimension in {dims}")
        return super().__new__(cls, dims)

    @property
    def numel(self) -> int:
        n, c, h, w = self
        return n * c * h * w


class Tensor:
    """Immutable float64 array of shape (N, C, H, W) in row-major order."""

    __slots__ = ("_data",)

    def __init__(self, data, shape: Sequence[int] | None = None):
        arr = np.array(data, dtype=np.float64, copy=True)
        if shape is not None:
            shape = Shape(shape)
            if arr.size != shape.numel:
                raise TensorError(f"data length {arr.size} != element count {shape.numel}")
            arr = arr.reshape(shape)
        else:
            Shape(arr.shape)
        if not np.all(np.isfinite(arr)):
            raise TensorError("non-finite value in tensor payload")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        self._data = arr

    @property
    def shape(self) -> Shape:
        return Shape(self._data.shape)

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the payload."""
        return self._data

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def flat(self) -> np.ndarray:
        return self._data.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return self._data.shape == other._data.shape and self._data.tobytes() == other._data.tobytes()

    def __hash__(self):
        return hash((self._data.shape, self._data.tobytes()))

    def __repr__(self):
        return f"Tensor(shape={tuple(self._data.shape)})"


class Rng:
    """Seeded normal/uniform stream (PCG64).

    ``Rng.for_index(seed, i)`` derives an independent stream per sample index so
    that samples can be produced in any order with identical results.
    """

    def __init__(self, seed: int, *key: int):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        entropy = [self.seed & 0xFFFFFFFFFFFFFFFF, *self.key]
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    @classmethod
    def for_index(cls, seed: int, index: int) -> "Rng":
        return cls(seed, index)

    def child(self, *key: int) -> "Rng":
        return Rng(self.seed, *self.key, *key)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def normal(self, size=None, stddev: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, stddev, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def random(self, size=None):
        return self._gen.random(size)


def zeros(shape: Sequence[int]) -> Tensor:
    return Tensor(np.zeros(Shape(shape)))


def randn(shape: Sequence[int], rng: Rng, stddev: float = 1.0) -> Tensor:
    if not stddev > 0:
        raise TensorError(f"stddev must be positive, got {stddev}")
    return Tensor(rng.normal(Shape(shape), stddev))


def dumps(t: Tensor) -> bytes:
    return _HEADER.pack(MAGIC, VERSION) + _DIMS.pack(*t.shape) + t.data.astype("<f8", copy=False).tobytes()


def loads(raw: bytes, source: str = "<bytes>") -> Tensor:
    if len(raw) < _HEADER.size + _DIMS.size:
        raise CorruptTensorFile(f"corrupt tensor file {source!r}: truncated header")
    magic, version = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise CorruptTensorFile(f"corrupt tensor file {source!r}: bad magic")
    if version != VERSION:
        raise CorruptTensorFile(f"unsupported tensor file version {version}")
    dims = _DIMS.unpack_from(raw, _HEADER.size)
    try:
        shape = Shape(dims)
    except TensorError as e:
        raise CorruptTensorFile(f"corrupt tensor file {source!r}: {e}") from None
    payload = raw[_HEADER.size + _DIMS.size:]
    if len(payload) != 8 * shape.numel:
        raise CorruptTensorFile(
            f"corrupt tensor file {source!r}: payload {len(payload)} bytes, expected {8 * shape.numel}"
        )
    return Tensor(np.frombuffer(payload, dtype="<f8"), shape)


def save(t: Tensor, path) -> None:
    if not path:
        raise OSError("empty path")
    with open(path, "wb") as f:
        f.write(dumps(t))


def load(path) -> Tensor:
    if not path:
        raise OSError("empty path")
    with open(path, "rb") as f:
        raw = f.read()
    return loads(raw, os.fspath(path))

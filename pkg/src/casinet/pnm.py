"""Binary PGM (P5) / PPM (P6) reading and writing, 8-bit only."""

from __future__ import annotations

import numpy as np


class PnmError(ValueError):
    pass


def quantize(values) -> np.ndarray:
    """Map [0, 1] reals to 0..255 with round-half-up; out-of-range values are clipped."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def _check_u8(arr) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255 or not np.all(arr == np.round(arr))):
            raise PnmError("values must be integers in 0..255")
        arr = arr.astype(np.uint8)
    return arr


def write_pgm(path, image) -> None:
    """Write an (H, W) integer map as P5."""
    img = _check_u8(image)
    if img.ndim != 2:
        raise PnmError(f"PGM needs an (H, W) array, got {img.shape}")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(img).tobytes())


def write_ppm(path, image) -> None:
    """Write an (H, W, 3) or (3, H, W) array as P6."""
    img = _check_u8(image)
    if img.ndim == 3 and img.shape[0] == 3 and img.shape[2] != 3:
        img = img.transpose(1, 2, 0)
    if img.ndim != 3 or img.shape[2] != 3:
        raise PnmError(f"PPM needs an (H, W, 3) array, got {img.shape}")
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(img).tobytes())


def _tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    toks, i = [], 0
    while len(toks) < count:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if i < len(data) and data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        if j == i:
            raise PnmError("truncated header")
        toks.append(data[i:j])
        i = j
    return toks, i + 1  # one whitespace byte ends the header


def read_pnm(path) -> np.ndarray:
    """Read P5 -> (H, W) uint8 or P6 -> (H, W, 3) uint8."""
    with open(path, "rb") as f:
        data = f.read()
    toks, off = _tokens(data, 4)
    magic = toks[0]
    if magic not in (b"P5", b"P6"):
        raise PnmError(f"unsupported magic {magic!r}")
    w, h, maxval = (int(t) for t in toks[1:])
    if maxval != 255:
        raise PnmError("only maxval 255 is supported")
    ch = 1 if magic == b"P5" else 3
    n = w * h * ch
    payload = data[off:off + n]
    if len(payload) != n:
        raise PnmError("truncated pixel data")
    arr = np.frombuffer(payload, dtype=np.uint8)
    return arr.reshape(h, w) if ch == 1 else arr.reshape(h, w, 3)

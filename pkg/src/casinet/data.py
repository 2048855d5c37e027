"""Synthetic multi-scale shapes segmentation data.

Each image holds a few circles, rectangles and triangles (class = shape type)
whose sizes are drawn log-uniformly over a wide range, so the same class shows
up at very different scales.  Pixel values are stored on the 8-bit grid so that
writing to PPM and reading back is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import pnm
from .tensor import Rng, Tensor

KINDS = ("circle", "rect", "triangle")
BACKGROUND_COLOR = (0.5, 0.5, 0.5)
CLASS_COLORS = ((0.75, 0.45, 0.40), (0.40, 0.72, 0.45), (0.45, 0.45, 0.78))
MAX_RETRIES = 10


@dataclass
class SceneSpec:
    image_size: int = 64
    num_classes: int = 4
    shapes_per_image: tuple[int, ...] = (3, 6)
    size_range: tuple[float, ...] = (0.05, 0.6)
    noise_stddev: float = 0.05
    color_jitter: float = 0.2
    data_seed: int = 0

    def __post_init__(self):
        from .config import ConfigError

        self.shapes_per_image = tuple(int(v) for v in self.shapes_per_image)
        self.size_range = tuple(float(v) for v in self.size_range)
        lo, hi = self.size_range
        if not (0 < lo <= hi <= 1):
            raise ConfigError(f"size_range must lie within (0, 1], got {self.size_range}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        a, b = self.shapes_per_image
        if not 0 <= a <= b:
            raise ConfigError(f"bad shapes_per_image {self.shapes_per_image}")
        if self.image_size < 4 or self.noise_stddev < 0 or self.color_jitter < 0:
            raise ConfigError("invalid image_size / noise_stddev / color_jitter")


@dataclass
class Shape:
    kind: str
    label: int
    cx: float
    cy: float
    size: float  # diameter in pixels
    color: tuple[float, float, float]
    aspect: float = 1.0
    angle: float = 0.0


@dataclass
class SegSample:
    image: Tensor  # (1, 3, H, W), values in [0, 1]
    labels: np.ndarray  # (H, W) int64


def class_color(label: int) -> tuple[float, float, float]:
    if label == 0:
        return BACKGROUND_COLOR
    base = CLASS_COLORS[(label - 1) % len(CLASS_COLORS)]
    # classes beyond the three base colors get a darker tone
    tone = 0.8 ** ((label - 1) // len(CLASS_COLORS))
    return tuple(c * tone for c in base)


def shape_mask(shape: Shape, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    dx, dy = xx - shape.cx, yy - shape.cy
    r = shape.size / 2
    if shape.kind == "circle":
        return dx * dx + dy * dy <= r * r
    if shape.kind == "rect":
        c, s = math.cos(shape.angle), math.sin(shape.angle)
        u, v = c * dx + s * dy, -s * dx + c * dy
        return (np.abs(u) <= r) & (np.abs(v) <= r * shape.aspect)
    if shape.kind == "triangle":
        pts = [(r * math.cos(shape.angle + 2 * math.pi * i / 3), r * math.sin(shape.angle + 2 * math.pi * i / 3))
               for i in range(3)]
        signs = []
        for (x0, y0), (x1, y1) in zip(pts, pts[1:] + pts[:1]):
            signs.append((x1 - x0) * (dy - y0) - (y1 - y0) * (dx - x0))
        return ((signs[0] >= 0) & (signs[1] >= 0) & (signs[2] >= 0)) | (
            (signs[0] <= 0) & (signs[1] <= 0) & (signs[2] <= 0))
    raise ValueError(f"unknown shape kind {shape.kind!r}")


def render_scene(shapes, spec: SceneSpec, rng: Rng | None = None,
                 background=BACKGROUND_COLOR) -> SegSample:
    """Paint shapes in order (later ones occlude earlier ones) and add pixel noise."""
    n = spec.image_size
    img = np.empty((3, n, n))
    img[:] = np.asarray(background).reshape(3, 1, 1)
    labels = np.zeros((n, n), dtype=np.int64)
    for s in shapes:
        m = shape_mask(s, n)
        img[:, m] = np.asarray(s.color).reshape(3, 1)
        labels[m] = s.label
    if spec.noise_stddev > 0:
        if rng is None:
            raise ValueError("noise needs an rng")
        img = img + rng.normal(img.shape, spec.noise_stddev)
    img = pnm.quantize(img).astype(np.float64) / 255.0
    return SegSample(Tensor(img[None]), labels)


def _jitter(color, rng: Rng, amount: float):
    return tuple(float(np.clip(c + rng.uniform(-amount, amount), 0.0, 1.0)) for c in color)


def sample_shapes(spec: SceneSpec, rng: Rng) -> list[Shape]:
    lo, hi = spec.size_range
    count = int(rng.integers(spec.shapes_per_image[0], spec.shapes_per_image[1] + 1))
    shapes = []
    for _ in range(count):
        label = int(rng.integers(1, spec.num_classes))
        kind = KINDS[(label - 1) % len(KINDS)]
        size = spec.image_size * math.exp(rng.uniform(math.log(lo), math.log(hi)))
        cx, cy = rng.uniform(0, spec.image_size, 2)
        shapes.append(Shape(
            kind=kind, label=label, cx=float(cx), cy=float(cy), size=size,
            color=_jitter(class_color(label), rng, spec.color_jitter),
            aspect=float(rng.uniform(0.5, 1.0)), angle=float(rng.uniform(0, 2 * math.pi)),
        ))
    return shapes


def generate_one(spec: SceneSpec, index: int, subseed: int = 0) -> SegSample:
    rng = Rng(spec.data_seed, subseed, index)
    background = _jitter(BACKGROUND_COLOR, rng, spec.color_jitter)
    shapes = sample_shapes(spec, rng)
    return render_scene(shapes, spec, rng, background)


def generate(spec: SceneSpec, count: int, start: int = 0, subseed: int = 0) -> list[SegSample]:
    if count < 1:
        raise ValueError("count must be >= 1")
    return [generate_one(spec, start + i, subseed) for i in range(count)]


def class_frequencies(samples, num_classes: int) -> np.ndarray:
    counts = np.zeros(num_classes)
    for s in samples:
        counts += np.bincount(s.labels.reshape(-1), minlength=num_classes)[:num_classes]
    return counts / counts.sum()


@dataclass
class Dataset:
    spec: SceneSpec
    train: list[SegSample]
    val: list[SegSample]
    subseed: int = 0


def make_split(spec: SceneSpec, train_count: int, val_count: int) -> Dataset:
    """Train = indices [0, train_count), val = the next val_count indices."""
    for subseed in range(MAX_RETRIES + 1):
        train = generate(spec, train_count, 0, subseed)
        present = np.zeros(spec.num_classes, dtype=bool)
        for s in train:
            present[np.unique(s.labels)] = True
        if present.all():
            val = generate(spec, val_count, train_count, subseed) if val_count else []
            return Dataset(spec, train, val, subseed)
    raise RuntimeError(f"training set misses a class after {MAX_RETRIES} retries")


def save_dataset(ds: Dataset, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(ds.train + ds.val):
        pnm.write_ppm(d / f"img_{i:05d}.ppm", pnm.quantize(s.image.data[0]))
        pnm.write_pgm(d / f"lab_{i:05d}.pgm", s.labels.astype(np.uint8))
    lines = [f"{f.name}={_fmt(getattr(ds.spec, f.name))}" for f in fields(ds.spec)]
    lines += [f"train_count={len(ds.train)}", f"val_count={len(ds.val)}", f"subseed={ds.subseed}"]
    (d / "spec.txt").write_text("\n".join(lines) + "\n")


def _fmt(v):
    return ",".join(str(x) for x in v) if isinstance(v, tuple) else str(v)


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    kv = dict(line.split("=", 1) for line in (d / "spec.txt").read_text().splitlines() if "=" in line)
    spec = SceneSpec(
        image_size=int(kv["image_size"]), num_classes=int(kv["num_classes"]),
        shapes_per_image=tuple(int(x) for x in kv["shapes_per_image"].split(",")),
        size_range=tuple(float(x) for x in kv["size_range"].split(",")),
        noise_stddev=float(kv["noise_stddev"]), color_jitter=float(kv["color_jitter"]),
        data_seed=int(kv["data_seed"]),
    )
    n_train, n_val = int(kv["train_count"]), int(kv["val_count"])
    samples = []
    for i in range(n_train + n_val):
        img = pnm.read_pnm(d / f"img_{i:05d}.ppm").astype(np.float64) / 255.0
        lab = pnm.read_pnm(d / f"lab_{i:05d}.pgm").astype(np.int64)
        samples.append(SegSample(Tensor(img.transpose(2, 0, 1)[None]), lab))
    return Dataset(spec, samples[:n_train], samples[n_train:], int(kv.get("subseed", 0)))

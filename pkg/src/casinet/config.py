"""Configuration records for the model, losses, optimizer and runs."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    K: int = 5
    dilations: tuple[int, ...] = (1, 6, 12, 24, 36)
    in_channels: int = 3
    num_classes: int = 4
    backbone_channels: int = 32
    branch_channels: int = 64
    use_aspp: bool = True
    use_csi: bool = True
    use_sa: bool = True
    scale_index: bool = True
    shared_embedding: bool = False
    sa_activation: str = "sigmoid"
    sa_channel_shared: bool = False
    csi_residual: bool = False
    aux_weight: float = 0.4
    reduction: int = 4

    def __post_init__(self):
        self.dilations = tuple(int(d) for d in self.dilations)
        if len(self.dilations) != self.K:
            raise ConfigError(f"len(dilations)={len(self.dilations)} does not match K={self.K}")
        if any(d < 1 for d in self.dilations):
            raise ConfigError("dilations must be positive")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.aux_weight < 0:
            raise ConfigError("aux_weight must be >= 0")
        if self.reduction < 1:
            raise ConfigError("reduction must be >= 1")
        if self.sa_activation not in ("sigmoid", "softmax"):
            raise ConfigError(f"sa_activation must be sigmoid or softmax, got {self.sa_activation!r}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if not self.use_aspp and (self.use_csi or self.use_sa):
            raise ConfigError("use_csi/use_sa need use_aspp")

    def replace(self, **kw) -> "ModelConfig":
        return dataclasses.replace(self, **kw)


@dataclass
class LossConfig:
    class_weights: Any = "auto"  # "auto", "none" or a sequence of positive reals
    ohem_keep_fraction: float = 1.0
    ignore_label: int = 255

    def __post_init__(self):
        if not 0 < self.ohem_keep_fraction <= 1:
            raise ConfigError("ohem_keep_fraction must lie in (0, 1]")
        if not isinstance(self.class_weights, str):
            self.class_weights = tuple(float(w) for w in self.class_weights)
            if any(w <= 0 for w in self.class_weights):
                raise ConfigError("class weights must be positive")
        elif self.class_weights not in ("auto", "none"):
            raise ConfigError(f"class_weights must be auto, none or a list, got {self.class_weights!r}")


@dataclass
class OptimConfig:
    base_lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005
    total_iters: int = 2000
    poly_power: float = 0.9

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ConfigError("base_lr must be positive")
        if not self.poly_power > 0:
            raise ConfigError("poly_power must be positive")
        if self.total_iters < 1:
            raise ConfigError("total_iters must be >= 1")


# imported late to avoid a cycle: data imports ConfigError
from .data import SceneSpec  # noqa: E402


@dataclass
class RunConfig:
    scene: SceneSpec = field(default_factory=SceneSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    seed: int = 0
    train_count: int = 200
    val_count: int = 50
    batch_size: int = 8
    eval_interval: int = 0
    flip: bool = True
    threads: int = 1
    data_dir: str = ""
    variants: tuple[str, ...] = ("fcn", "aspp_only", "aspp_csi", "aspp_sa", "casinet",
                                 "csi_no_scale_index", "csi_shared_embedding",
                                 "sa_softmax", "sa_channel_shared")
    seeds: tuple[int, ...] = (0, 1, 2)
    image_index: int = 0

    _SECTIONS = ("scene", "model", "loss", "optim")

    def __post_init__(self):
        if self.scene.num_classes != self.model.num_classes:
            raise ConfigError(f"scene has {self.scene.num_classes} classes, model {self.model.num_classes}")
        if self.train_count < 1 or self.val_count < 0:
            raise ConfigError("train_count must be >= 1 and val_count >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.eval_interval < 0:
            raise ConfigError("eval_interval must be >= 0")
        if not self.variants or not self.seeds:
            raise ConfigError("variants and seeds must be non-empty")

    @classmethod
    def key_map(cls) -> dict[str, list[str | None]]:
        """Flat key -> owning sections (``None`` = top level).

        A key present in several sections (``num_classes``) sets all of them.
        """
        out: dict[str, list[str | None]] = {}
        defaults = cls()
        for f in fields(cls):
            if f.name in cls._SECTIONS:
                for sf in fields(getattr(defaults, f.name)):
                    out.setdefault(sf.name, []).append(f.name)
            else:
                out[f.name] = [None]
        return out

    def _get(self, section: str | None, key: str):
        return getattr(getattr(self, section), key) if section else getattr(self, key)

    def with_overrides(self, items: dict[str, str]) -> "RunConfig":
        kmap = self.key_map()
        unknown = sorted(set(items) - set(kmap))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        top: dict[str, Any] = {}
        sections: dict[str, dict[str, Any]] = {s: {} for s in self._SECTIONS}
        for key, raw in items.items():
            for section in kmap[key]:
                value = _coerce(key, raw, self._get(section, key))
                if section:
                    sections[section][key] = value
                else:
                    top[key] = value
        try:
            for s, kv in sections.items():
                if kv:
                    top[s] = dataclasses.replace(getattr(self, s), **kv)
            return dataclasses.replace(self, **top)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None

    def flat(self) -> dict[str, Any]:
        return {key: self._get(secs[0], key) for key, secs in self.key_map().items()}

    def dumps(self) -> str:
        return "".join(f"{k}={_format(v)}\n" for k, v in self.flat().items())

    def write(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def from_file(cls, path, overrides: dict[str, str] | None = None) -> "RunConfig":
        items = parse_kv(Path(path).read_text())
        items.update(overrides or {})
        return cls().with_overrides(items)


def parse_kv(text: str) -> dict[str, str]:
    items = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        items[k.strip()] = v.strip()
    return items


def _format(v) -> str:
    if isinstance(v, (tuple, list)):
        return ",".join(_format(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(key: str, raw, current):
    if not isinstance(raw, str):
        return raw
    s = raw.strip()
    try:
        if isinstance(current, bool):
            low = s.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(s)
        if isinstance(current, int):
            return int(s)
        if isinstance(current, float):
            return float(s)
        if key == "class_weights":
            return s if s in ("auto", "none") else tuple(float(p) for p in s.split(","))
        if isinstance(current, tuple):
            parts = [p.strip() for p in s.split(",") if p.strip()]
            if current and isinstance(current[0], bool):
                return tuple(_coerce(key, p, current[0]) for p in parts)
            if current and isinstance(current[0], int):
                return tuple(int(p) for p in parts)
            if current and isinstance(current[0], float):
                return tuple(float(p) for p in parts)
            return tuple(parts)
        return s
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None

"""Model checkpoints: a zip with ``manifest.txt`` and one ``.ten`` file per array."""

from __future__ import annotations

import dataclasses
import zipfile

import numpy as np

from .config import ConfigError, ModelConfig, RunConfig, _coerce, _format, parse_kv
from .model import SegModel
from .tensor import Tensor, dumps, loads

FORMAT = "casinet-checkpoint-1"


class CheckpointMismatch(ConfigError):
    pass


def _as4(a: np.ndarray) -> Tensor:
    a = np.asarray(a, dtype=np.float64)
    return Tensor(a.reshape((1,) * (4 - a.ndim) + a.shape))


def _ten_bytes(a: np.ndarray) -> bytes:
    return dumps(_as4(a))


def _ten_load(raw: bytes, shape, name: str) -> np.ndarray:
    return loads(raw, name).numpy().reshape(shape)


def model_config_items(cfg: ModelConfig) -> dict[str, str]:
    return {f.name: _format(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)}


def save_checkpoint(model: SegModel, path, run: RunConfig | None = None) -> None:
    lines = [f"format={FORMAT}"]
    lines += [f"model.{k}={v}" for k, v in model_config_items(model.cfg).items()]
    if run is not None:
        lines += [f"run.{k}={_format(v)}" for k, v in run.flat().items()]
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as z:
        for name, p in model.named_parameters():
            lines.append(f"param.{name}={_format(p.data.shape)}")
            z.writestr(f"params/{name}.ten", _ten_bytes(p.data))
        for name, st in model.named_bn_states():
            lines.append(f"bn.{name}={st.running_mean.size}")
            z.writestr(f"bn/{name}.mean.ten", _ten_bytes(st.running_mean))
            z.writestr(f"bn/{name}.var.ten", _ten_bytes(st.running_var))
        z.writestr("manifest.txt", "\n".join(lines) + "\n")


def read_manifest(path) -> dict[str, str]:
    with zipfile.ZipFile(path) as z:
        return parse_kv(z.read("manifest.txt").decode())


def checkpoint_model_config(manifest: dict[str, str]) -> ModelConfig:
    defaults = ModelConfig()
    kw = {}
    for f in dataclasses.fields(ModelConfig):
        key = f"model.{f.name}"
        if key in manifest:
            kw[f.name] = _coerce(f.name, manifest[key], getattr(defaults, f.name))
    return ModelConfig(**kw)


def load_checkpoint(path, expected: ModelConfig | None = None) -> SegModel:
    """Rebuild the stored model; refuses when ``expected`` disagrees with the stored config."""
    manifest = read_manifest(path)
    if manifest.get("format") != FORMAT:
        raise ConfigError(f"{path}: not a checkpoint ({manifest.get('format')!r})")
    cfg = checkpoint_model_config(manifest)
    if expected is not None and expected != cfg:
        diffs = [f.name for f in dataclasses.fields(cfg) if getattr(cfg, f.name) != getattr(expected, f.name)]
        raise CheckpointMismatch(f"checkpoint config disagrees with requested model flags: {', '.join(diffs)}")
    model = SegModel(cfg, seed=0)
    with zipfile.ZipFile(path) as z:
        for name, p in model.named_parameters():
            shape = tuple(int(s) for s in manifest[f"param.{name}"].split(","))
            if shape != p.data.shape:
                raise CheckpointMismatch(f"parameter {name}: stored {shape}, model {p.data.shape}")
            p.data = _ten_load(z.read(f"params/{name}.ten"), shape, name)
        for name, st in model.named_bn_states():
            c = st.running_mean.size
            st.running_mean = _ten_load(z.read(f"bn/{name}.mean.ten"), (c,), name)
            st.running_var = _ten_load(z.read(f"bn/{name}.var.ten"), (c,), name)
    return model

"""Command-line entry point.

    casinet gen-data       --out DIR [--config FILE] [--key value ...]
    casinet train          --out DIR [--config FILE] [--key value ...]
    casinet eval           --out DIR --checkpoint CKPT [--config FILE] [--key value ...]
    casinet ablate         --out DIR [--config FILE] [--jobs N] [--key value ...]
    casinet dump-attention --out DIR --checkpoint CKPT [--image I] [--config FILE]
    casinet gradcheck      --out DIR [--config FILE] [--key value ...]

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import pnm
from .config import ConfigError, RunConfig
from .data import Dataset, load_dataset, make_split, save_dataset
from .model import VARIANTS, variant_config

log = logging.getLogger("casinet")

EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_overrides(tokens: list[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
        else:
            if i + 1 >= len(tokens):
                raise UsageError(f"missing value for {tok}")
            i += 1
            val = tokens[i]
        out[key.replace("-", "_")] = val
        i += 1
    return out


def resolve_config(config_path: str | None, overrides: dict[str, str]) -> RunConfig:
    if config_path:
        if not Path(config_path).is_file():
            raise FileNotFoundError(f"config file not found: {config_path}")
        return RunConfig.from_file(config_path, overrides)
    return RunConfig().with_overrides(overrides)


def load_data(run: RunConfig, data_dir: str | None = None) -> Dataset:
    d = data_dir or run.data_dir
    if d:
        if not (Path(d) / "spec.txt").is_file():
            raise FileNotFoundError(f"dataset directory {d!r} has no spec.txt")
        return load_dataset(d)
    return make_split(run.scene, run.train_count, run.val_count)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --- commands ---------------------------------------------------------------

def cmd_gen_data(run: RunConfig, out: Path, args) -> None:
    ds = make_split(run.scene, run.train_count, run.val_count)
    save_dataset(ds, out)
    log.info("wrote %d train + %d val samples to %s", len(ds.train), len(ds.val), out)


def cmd_train(run: RunConfig, out: Path, args) -> None:
    from .checkpoint import save_checkpoint
    from .train import evaluate, history_csv, train

    ds = load_data(run, args.data)
    result = train(run, ds)
    save_checkpoint(result.model, out / "checkpoint.zip", run)
    (out / "train_log.csv").write_text(history_csv(result))
    metrics = evaluate(result.model, ds.val, run.batch_size, run.loss.ignore_label) if ds.val else {}
    metrics["final_loss"] = result.losses[-1]
    _write_json(out / "metrics.json", metrics)
    log.info("final loss %.6f val mIoU %s", result.losses[-1], metrics.get("miou"))


def cmd_eval(run: RunConfig, out: Path, args) -> None:
    from .checkpoint import load_checkpoint
    from .train import evaluate

    if not args.checkpoint:
        raise UsageError("eval needs --checkpoint")
    if not Path(args.checkpoint).is_file():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    model = load_checkpoint(args.checkpoint, expected=run.model)
    ds = load_data(run, args.data)
    if not ds.val:
        raise ConfigError("eval needs val_count >= 1")
    metrics = evaluate(model, ds.val, run.batch_size, run.loss.ignore_label)
    _write_json(out / "metrics.json", metrics)
    log.info("val mIoU %.4f pixel acc %.4f", metrics["miou"], metrics["pixel_acc"])


def _ablate_one(job) -> tuple[str, int, float, float]:
    run, variant, seed, data_dir, ckpt_dir = job
    from .checkpoint import save_checkpoint
    from .train import evaluate, thread_limit, train

    with thread_limit(run.threads):
        ds = load_data(run, data_dir)
        r = dataclasses.replace(run, model=variant_config(variant, run.model), seed=seed)
        res = train(r, ds)
        m = evaluate(res.model, ds.val, run.batch_size, run.loss.ignore_label)
    save_checkpoint(res.model, Path(ckpt_dir) / f"{variant}_seed{seed}.zip", r)
    return variant, seed, m["miou"], m["pixel_acc"]


def run_ablation(run: RunConfig, out: Path, jobs: int = 1, data_dir: str | None = None) -> dict[str, float]:
    unknown = [v for v in run.variants if v not in VARIANTS]
    if unknown:
        raise ConfigError(f"unknown variant(s): {', '.join(unknown)}")
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    work = [(run, v, s, data_dir, str(ckpt_dir)) for v in run.variants for s in run.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            rows = list(ex.map(_ablate_one, work))
    else:
        rows = [_ablate_one(w) for w in work]
    lines = ["variant,seed,miou,pixel_acc"] + [f"{v},{s},{m:.10g},{a:.10g}" for v, s, m, a in rows]
    (out / "ablation_runs.csv").write_text("\n".join(lines) + "\n")
    medians = {v: statistics.median(m for vv, _, m, _ in rows if vv == v) for v in run.variants}
    lines = ["variant,miou"] + [f"{v},{medians[v]:.10g}" for v in run.variants]
    (out / "ablation.csv").write_text("\n".join(lines) + "\n")
    return medians


def cmd_ablate(run: RunConfig, out: Path, args) -> None:
    medians = run_ablation(run, out, args.jobs, args.data)
    for v, m in medians.items():
        log.info("%-22s median val mIoU %.4f", v, m)


def dump_attention(model, image: np.ndarray, out: Path) -> list[Path]:
    """Write K channel-averaged attention maps and K x K affinity maps as PGM."""
    cfg = model.cfg
    if not (cfg.use_sa and cfg.use_csi):
        raise ConfigError("dump-attention needs a model with use_csi and use_sa on")
    capture: dict = {}
    model.forward(image, mode="eval", capture=capture)
    written = []
    att = capture["attention"].channel_mean()[0]  # (K, H, W)
    for k in range(cfg.K):
        p = out / f"attention_{k + 1}.pgm"
        pnm.write_pgm(p, pnm.quantize(att[k]))
        written.append(p)
    aff = capture["affinity"].normalized[0]  # (H, W, K, K)
    for k in range(cfg.K):
        for m in range(cfg.K):
            p = out / f"affinity_t{k + 1}_s{m + 1}.pgm"
            pnm.write_pgm(p, pnm.quantize(aff[:, :, k, m]))
            written.append(p)
    return written


def cmd_dump_attention(run: RunConfig, out: Path, args) -> None:
    from .checkpoint import load_checkpoint

    if not args.checkpoint:
        raise UsageError("dump-attention needs --checkpoint")
    if not Path(args.checkpoint).is_file():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    model = load_checkpoint(args.checkpoint)
    ds = load_data(run, args.data)
    pool = ds.val or ds.train
    idx = run.image_index if args.image is None else args.image
    if not 0 <= idx < len(pool):
        raise ConfigError(f"image index {idx} out of range (0..{len(pool) - 1})")
    sample = pool[idx]
    pnm.write_ppm(out / "image.ppm", pnm.quantize(sample.image.data[0]))
    written = dump_attention(model, sample.image.data, out)
    log.info("wrote %d rasters to %s", len(written), out)


def cmd_gradcheck(run: RunConfig, out: Path, args) -> None:
    from .verify import model_gradcheck

    reports = model_gradcheck(run.model, seeds=run.seeds)
    lines = []
    for seed, rep in reports:
        lines.append(f"# seed {seed} max_rel_err {rep.max_rel_err:.3e} {'PASS' if rep.passed else 'FAIL'}")
        lines.extend(rep.lines())
    (out / "gradcheck.txt").write_text("\n".join(lines) + "\n")
    worst = max(r.max_rel_err for _, r in reports)
    log.info("gradcheck max relative error %.3e over %d seeds", worst, len(reports))
    if not all(r.passed for _, r in reports):
        raise RuntimeError(f"gradcheck failed: max relative error {worst:.3e}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "dump-attention": cmd_dump_attention,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="casinet", description="Multi-scale fusion segmentation toolkit")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--checkpoint")
    p.add_argument("--data", help="dataset directory written by gen-data")
    p.add_argument("--image", type=int, help="val image index for dump-attention")
    p.add_argument("--jobs", type=int, default=1, help="parallel processes for ablate")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args, rest = build_parser().parse_known_args(argv)
        overrides = _parse_overrides(rest)
        run = resolve_config(args.config, overrides)
    except (UsageError, ConfigError) as e:
        print(f"casinet: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001 - unreadable config file and the like
        print(f"casinet: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    out = Path(args.out)
    try:
        from .train import thread_limit

        out.mkdir(parents=True, exist_ok=True)
        run.write(out / "config.txt")
        with thread_limit(run.threads):
            COMMANDS[args.command](run, out, args)
    except (UsageError, ConfigError) as e:
        print(f"casinet: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001 - every other failure maps to exit code 2
        log.debug("failure", exc_info=True)
        print(f"casinet: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""``tograsp`` command line: synth, pretrain, train, eval, predict.

Settings come from built-in defaults, then an optional flat JSON file
(``--config``), then explicit flags. The resolved settings are echoed as
``run_config.json`` in the output directory. Exit codes: 0 success,
1 usage, 2 data or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from collections import Counter
from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigurationError, NumericalError, ToGraspError
from .model import VARIANTS, decode_grasp, load_checkpoint
from .synth.splits import SPLIT_TYPES

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
RUN_CONFIG = "run_config.json"

DEFAULTS = {
    "config": None,
    "seed": 0,
    "out": None,
    "dataset": "data",
    "split": "scene",
    "variant": "graspclip",
    "iters": None,
    "force": False,
    "overlays": False,
    "freeze_encoders": False,
    "encoder_ckpt": None,
    "scenes": 500,
    "size": 128,
    "lr": None,
    "beta": 1.0,
    "gamma": 1.0,
    "batch": 8,
    "checkpoint": "runs/train/model.ckpt",
    "image": None,
    "instruction": None,
}
DEFAULT_OUT = {
    "synth": "data",
    "pretrain": "runs/pretrain",
    "train": "runs/train",
    "eval": "runs/eval",
    "predict": "runs/predict",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    a = common.add_argument
    # defaults are None so that only flags actually given override the config file
    a("--config", help="flat JSON file; every key matches a flag name with '_' for '-'")
    a("--seed", type=int)
    a("--out", help="output directory")
    a("--dataset", help="dataset directory")
    a("--split", help="scene | instance | category | category_task | all")
    a("--variant", help="|".join(VARIANTS))
    a("--iters", type=int, help="training iterations")
    a("--force", action="store_true", default=None, help="overwrite a non-empty output directory")
    a("--overlays", action="store_true", default=None, help="write per-scene overlay PNGs")
    a("--freeze-encoders", action="store_true", default=None, help="keep loaded encoder weights fixed")
    a("--encoder-ckpt", help="encoder checkpoint from `pretrain`")
    a("--scenes", type=int, help="number of scenes to synthesize")
    a("--size", type=int, help="image side S")
    a("--lr", type=float)
    a("--beta", type=float, help="location loss weight")
    a("--gamma", type=float, help="orientation loss weight")
    a("--batch", type=int, help="contrastive batch size")
    a("--checkpoint", help="model checkpoint for eval and predict")
    a("--image", help="PNG to run predict on")
    a("--instruction", help="instruction text for predict")

    p = _Parser(prog="tograsp", description="Task-oriented grasp prediction toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    sub.add_parser("pretrain", parents=[common], help="contrastive encoder pretraining")
    sub.add_parser("train", parents=[common], help="train a grasp model")
    sub.add_parser("eval", parents=[common], help="top-1 evaluation on test splits")
    sub.add_parser("predict", parents=[common], help="predict one grasp for an image")
    return p


def resolve(args: argparse.Namespace) -> dict:
    """Defaults, overlaid by the config file, overlaid by explicit flags."""
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigurationError("config file must hold a flat JSON object")
        unknown = sorted(set(doc) - set(DEFAULTS))
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        nested = [k for k, v in doc.items() if isinstance(v, (dict, list))]
        if nested:
            raise ConfigurationError(f"config must be flat; {nested[0]!r} is nested")
        cfg.update(doc)
    for k, v in vars(args).items():
        if k in DEFAULTS and v is not None:
            cfg[k] = v
    cfg["command"] = args.command
    if cfg["out"] is None:
        cfg["out"] = DEFAULT_OUT[args.command]
    if cfg["variant"] not in VARIANTS:
        raise UsageError(f"unknown variant {cfg['variant']!r}; choose from {', '.join(VARIANTS)}")
    if cfg["split"] not in (*SPLIT_TYPES, "all"):
        raise UsageError(f"unknown split {cfg['split']!r}; choose from {', '.join(SPLIT_TYPES)}, all")
    if cfg["freeze_encoders"] and not cfg["encoder_ckpt"]:
        raise UsageError("--freeze-encoders requires --encoder-ckpt")
    return cfg


def echo_config(cfg: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / RUN_CONFIG).write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n")


# --------------------------------------------------------------- commands


def cmd_synth(cfg: dict) -> None:
    from .synth.dataset import DatasetConfig, make_dataset

    out = Path(cfg["out"])
    if out.exists() and any(out.iterdir()) and not cfg["force"]:
        raise ConfigurationError(f"{out} is not empty; pass --force to overwrite")
    if out.exists():
        for stale in (out / "scenes").glob("*.png"):
            stale.unlink()
    dcfg = DatasetConfig(n_scenes=cfg["scenes"], size=cfg["size"], seed=cfg["seed"])
    t0 = time.perf_counter()
    make_dataset(dcfg, out)
    echo_config(cfg, out)
    print(summarize_dataset(out))
    print(f"wrote {cfg['scenes']} scenes to {out} in {time.perf_counter() - t0:.1f}s")


def summarize_dataset(root: Path) -> str:
    """Counts in the style of a dataset-statistics table."""
    from .synth import Dataset

    ds = Dataset(root)
    objects = Counter(len(e.objects) for e in ds.entries.values())
    n_grasps = sum(len(e.grasps) for e in ds.entries.values())
    rows = [
        ("categories", len(ds.categories)),
        ("instances", len(ds.instances)),
        ("tasks", len(ds.tasks)),
        ("scenes", len(ds)),
        ("objects", sum(k * v for k, v in objects.items())),
        ("grasps", n_grasps),
    ]
    lines = [f"{k:<12}{v:>8}" for k, v in rows]
    lines.append("objects/scene " + " ".join(f"{k}:{objects[k]}" for k in sorted(objects)))
    for st in SPLIT_TYPES:
        lines.append(f"split {st:<14} train {len(ds.ids(st, 'train')):>5}  test {len(ds.ids(st, 'test')):>5}")
    return "\n".join(lines)


def cmd_pretrain(cfg: dict) -> None:
    from .training import PretrainConfig, pretrain_contrastive

    _need_dataset(cfg)
    if cfg["split"] == "all":
        raise UsageError("pretrain needs a single split")
    pc = PretrainConfig(dataset=cfg["dataset"], out=cfg["out"], seed=cfg["seed"], split=cfg["split"], batch=cfg["batch"])
    if cfg["iters"] is not None:
        pc.iterations = cfg["iters"]
    if cfg["lr"] is not None:
        pc.lr = cfg["lr"]
    echo_config(cfg, Path(cfg["out"]))
    path, _, losses = pretrain_contrastive(pc)
    k = max(1, min(10, len(losses) // 2))
    print(f"contrastive loss {np.mean(losses[:k]):.4f} -> {np.mean(losses[-k:]):.4f}")
    print(f"encoders saved to {path}")


def cmd_train(cfg: dict) -> None:
    from .training import TrainConfig, train

    _need_dataset(cfg)
    if cfg["split"] == "all":
        raise UsageError("train needs a single split")
    tc = TrainConfig(
        dataset=cfg["dataset"], out=cfg["out"], split=cfg["split"], variant=cfg["variant"], seed=cfg["seed"],
        beta=cfg["beta"], gamma=cfg["gamma"], freeze_encoders=cfg["freeze_encoders"], encoder_ckpt=cfg["encoder_ckpt"],
    )
    if cfg["iters"] is not None:
        tc.iterations = cfg["iters"]
    if cfg["lr"] is not None:
        tc.lr = cfg["lr"]
    tc.checkpoint_every = min(tc.checkpoint_every, tc.iterations)
    tc.log_every = max(tc.iterations // 10, 1)
    echo_config(cfg, Path(cfg["out"]))
    res = train(tc)
    k = max(1, min(100, len(res.losses) // 10))
    print(f"loss {np.mean(res.losses[:k]):.4f} -> {np.mean(res.losses[-k:]):.4f} over {len(res.losses)} iterations")
    print(f"checkpoint saved to {Path(cfg['out']) / 'model.ckpt'}")


def _load_model(cfg: dict, variant: str | None = None):
    path = Path(cfg["checkpoint"])
    if path.is_dir():
        path = path / "model.ckpt"
    if not path.exists():
        raise ConfigurationError(f"checkpoint {path} not found")
    model, vocab, _ = load_checkpoint(path)
    if variant is not None and model.config.variant != variant:
        # tag shares the full model's parameters; other pairings fail the parameter check
        model, _, _ = load_checkpoint(path, replace(model.config, variant=variant))
    if vocab is None:
        raise ConfigurationError(f"checkpoint {path} carries no vocabulary")
    return model, vocab


def cmd_eval(cfg: dict) -> None:
    from .evaluation import emit_report, evaluate, model_predictor

    ds = _need_dataset(cfg)
    model, vocab = _load_model(cfg, cfg["variant"])
    if model.config.size != ds.size:
        raise ConfigurationError(f"model expects S={model.config.size} but the dataset has S={ds.size}")
    splits = list(SPLIT_TYPES) if cfg["split"] == "all" else [cfg["split"]]
    out = Path(cfg["out"])
    echo_config(cfg, out)
    predictor = model_predictor(model)
    reports = [evaluate(predictor, ds, s, model.config, vocab, seed=cfg["seed"], variant=cfg["variant"]) for s in splits]
    print(emit_report(reports, out, ds if cfg["overlays"] else None, overlays=cfg["overlays"]))


def cmd_predict(cfg: dict) -> dict:
    from .evaluation import ScenePrediction, draw_overlay
    from .language import UNK, normalize, tokenize
    from .model import PredictionMaps

    if not cfg["image"] or not cfg["instruction"]:
        raise UsageError("predict needs --image and --instruction")
    model, vocab = _load_model(cfg)
    try:
        with Image.open(cfg["image"]) as im:
            image = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except OSError as exc:
        raise ConfigurationError(f"cannot read image {cfg['image']}: {exc}") from exc
    unknown = [w for w in normalize(cfg["instruction"]) if vocab.id(w) == UNK]
    if unknown:
        print(f"warning: unknown words mapped to <unk>: {', '.join(unknown)}", file=sys.stderr)
    ids = tokenize(cfg["instruction"], vocab, model.config.t_max)
    g = decode_grasp(PredictionMaps.from_outputs(model.forward(image, ids)), model.config)
    result = {"x": g.x, "y": g.y, "theta_deg": g.theta, "w": g.w, "h": g.h}
    out = Path(cfg["out"])
    echo_config(cfg, out)
    draw_overlay(image, ScenePrediction(-1, cfg["instruction"], "", g, True)).save(out / "overlay.png")
    print(json.dumps({k: round(float(v), 4) for k, v in result.items()}))
    return result


def _need_dataset(cfg: dict):
    from .synth import Dataset

    root = Path(cfg["dataset"])
    if not (root / "manifest.jsonl").exists():
        raise ConfigurationError(f"no dataset at {root} (manifest.jsonl missing)")
    return Dataset(root)


COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve(args)
        COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ToGraspError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

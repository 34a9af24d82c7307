"""Model checkpoints: parameter file plus a JSON sidecar with the config.

``model.ckpt`` holds the parameters in the flat binary format of
:mod:`tograsp.autodiff.checkpoint`; ``model.json`` beside it holds
``{"model": ModelConfig, "vocab": Vocabulary | null, "meta": {...}}``.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from ..autodiff import Tensor, read_arrays, write_arrays
from ..errors import CheckpointError, ConfigurationError
from ..language import Vocabulary
from .config import ModelConfig
from .network import GraspNet, init_params

_LABELS = {"head.theta": "M_theta head", "head.q": "M_q head", "head.w": "M_w head"}


def describe(name: str) -> str:
    """Parameter name with a readable label for the output heads."""
    for prefix, label in _LABELS.items():
        if name.startswith(prefix + "."):
            return f"{label} ({name})"
    return name


def sidecar(path: str | os.PathLike) -> Path:
    return Path(path).with_suffix(".json")


def save_checkpoint(
    model: GraspNet,
    path: str | os.PathLike,
    vocab: Vocabulary | None = None,
    meta: dict | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_arrays(path, {k: t.data for k, t in model.params.items()})
    doc = {"model": model.config.to_json(), "vocab": vocab.to_json() if vocab else None, "meta": meta or {}}
    tmp = sidecar(path).with_name(sidecar(path).name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1, sort_keys=True))
    os.replace(tmp, sidecar(path))
    return path


def read_sidecar(path: str | os.PathLike) -> dict:
    side = sidecar(path)
    try:
        return json.loads(side.read_text())
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint config {side}: {exc}") from exc


def check_params(arrays: dict[str, np.ndarray], expected: dict[str, Tensor], path) -> None:
    for name, t in expected.items():
        if name not in arrays:
            raise CheckpointError(f"{path}: missing parameter {describe(name)}")
        if arrays[name].shape != t.shape:
            raise CheckpointError(
                f"{path}: {describe(name)} has shape {arrays[name].shape}, config expects {t.shape}"
            )
    extra = sorted(set(arrays) - set(expected))
    if extra:
        raise CheckpointError(f"{path}: unexpected parameter {describe(extra[0])}")


def load_checkpoint(
    path: str | os.PathLike, config: ModelConfig | None = None
) -> tuple[GraspNet, Vocabulary | None, dict]:
    """Load a model, validating every parameter against the config.

    ``config`` overrides the sidecar's; either way a mismatch names the
    offending parameter and nothing is returned.
    """
    doc = read_sidecar(path)
    try:
        cfg = config if config is not None else ModelConfig.from_json(doc["model"])
        cfg.validate()
    except (KeyError, TypeError, ConfigurationError) as exc:
        raise CheckpointError(f"{sidecar(path)}: bad model config: {exc}") from exc
    arrays = read_arrays(path)
    expected = init_params(cfg, seed=0)
    check_params(arrays, expected, path)
    params = {k: Tensor(arrays[k], requires_grad=True, name=k) for k in expected}
    vocab = Vocabulary.from_json(doc["vocab"]) if doc.get("vocab") else None
    return GraspNet(cfg, params), vocab, doc.get("meta", {})

"""Shared settings for the experiment scripts."""

from __future__ import annotations

import json
import time
from pathlib import Path

from tograsp.synth import Dataset
from tograsp.synth.dataset import DatasetConfig, make_dataset

ROOT = Path(__file__).resolve().parents[1]
RESULTS = ROOT / "results"

# Loss weights used by every experiment. L_loc averages over all S*S pixels
# and L_ori over positives*bins, so with unit weights the width term drives
# the shared trunk almost alone.
BETA, GAMMA = 30.0, 10.0


def ensure_dataset(path: Path, n_scenes: int, seed: int = 0, size: int = 128) -> Dataset:
    if not (path / "manifest.jsonl").exists():
        t0 = time.perf_counter()
        make_dataset(DatasetConfig(n_scenes=n_scenes, size=size, seed=seed), path)
        print(f"generated {n_scenes} scenes in {time.perf_counter() - t0:.1f}s", flush=True)
    return Dataset(path)


def write_result(name: str, doc: dict) -> Path:
    RESULTS.mkdir(parents=True, exist_ok=True)
    path = RESULTS / f"{name}.json"
    path.write_text(json.dumps(doc, indent=1))
    return path

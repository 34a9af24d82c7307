"""Overfit check: 32 training scenes at S = 128, 2000 iterations at lr 1e-4.

Writes ``results/overfit.json`` with the top-1 rate on the training scenes,
the loss curve summary and the wall time.
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

import numpy as np

from _common import BETA, GAMMA, ROOT, ensure_dataset, write_result
from tograsp.evaluation import evaluate, model_predictor
from tograsp.training import TrainConfig, train


def run(data: Path, out: Path, iterations: int = 2000, lr: float = 1e-4, scenes: int = 32, seed: int = 0) -> dict:
    ds = ensure_dataset(data, 500)
    t0 = time.perf_counter()
    cfg = TrainConfig(
        dataset=str(data), out=str(out), split="scene", iterations=iterations, lr=lr,
        beta=BETA, gamma=GAMMA, seed=seed, max_scenes=scenes, checkpoint_every=iterations, log_every=250,
    )
    res = train(cfg, dataset=ds)
    ids = ds.ids("scene", "train")[:scenes]
    rep = evaluate(model_predictor(res.model), ds, "scene", res.model.config, res.vocab, seed=seed, part="train", scene_ids=ids)
    wall = time.perf_counter() - t0
    L = np.asarray(res.losses)
    return {
        "scenes": scenes, "iterations": iterations, "lr": lr, "beta": BETA, "gamma": GAMMA, "seed": seed,
        "correct": rep.correct, "total": rep.total, "rate": rep.rate,
        "loss_first100": float(L[:100].mean()), "loss_900_1000": float(L[900:1000].mean()) if len(L) >= 1000 else None,
        "loss_last100": float(L[-100:].mean()), "seconds": wall,
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", type=Path, default=ROOT / "data" / "desk500")
    ap.add_argument("--out", type=Path, default=ROOT / "runs" / "overfit")
    ap.add_argument("--iters", type=int, default=2000)
    args = ap.parse_args()
    doc = run(args.data, args.out, args.iters)
    print(f"overfit top-1 {doc['rate']:.2f}% ({doc['correct']}/{doc['total']}) in {doc['seconds']:.0f}s")
    write_result("overfit", doc)


if __name__ == "__main__":
    main()

"""Desk-scale comparison of the full model, TAG and the three fusion ablations.

Every variant is trained from scratch on each split's training scenes with
the same budget and seed, then evaluated on that split's test scenes.
Results go to ``results/variants.json`` plus a report directory ``results/variants/``.
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

from _common import BETA, GAMMA, ROOT, ensure_dataset, write_result
from tograsp.evaluation import emit_report, evaluate, model_predictor
from tograsp.synth.splits import SPLIT_TYPES
from tograsp.training import TrainConfig, train

VARIANTS = ("graspclip", "tag", "cog_only", "fag_only", "fag_cog")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", type=Path, default=ROOT / "data" / "desk500")
    ap.add_argument("--runs", type=Path, default=ROOT / "runs" / "variants")
    ap.add_argument("--iters", type=int, default=5000)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    ds = ensure_dataset(args.data, 500)
    t0 = time.perf_counter()
    reports, timings = [], {}
    for split in SPLIT_TYPES:
        for variant in VARIANTS:
            t1 = time.perf_counter()
            cfg = TrainConfig(
                dataset=str(args.data), out=str(args.runs / split / variant), split=split, variant=variant,
                iterations=args.iters, lr=args.lr, beta=BETA, gamma=GAMMA, seed=args.seed,
                checkpoint_every=args.iters,
            )
            res = train(cfg, dataset=ds)
            rep = evaluate(model_predictor(res.model), ds, split, res.model.config, res.vocab, seed=args.seed, variant=variant)
            reports.append(rep)
            timings[f"{split}/{variant}"] = time.perf_counter() - t1
            print(f"{split:>13} {variant:>9} {rep.rate:6.2f}%  ({timings[f'{split}/{variant}']:.0f}s)", flush=True)
    table = emit_report(reports, ROOT / "results" / "variants")
    print(table)
    write_result(
        "variants",
        {
            "iterations": args.iters, "lr": args.lr, "beta": BETA, "gamma": GAMMA, "seed": args.seed,
            "seconds": time.perf_counter() - t0, "timings": timings,
            "reports": [r.to_json() for r in reports],
        },
    )


if __name__ == "__main__":
    main()

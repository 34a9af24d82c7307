"""Top-1 grasp correctness over the generalization splits, and report output."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from PIL import Image, ImageDraw
from scipy.ndimage import distance_transform_edt

from .errors import EvaluationError, SamplingError
from .geometry import ANGLE_THRESHOLD_DEG, JACCARD_THRESHOLD, GraspRect, is_correct, rect_corners
from .language import Instruction, Vocabulary, generate_instruction, load_templates
from .model import GraspNet, ModelConfig, PredictionMaps, decode_grasp
from .synth import Dataset
from .synth.dataset import worker_count
from .training import compatible_grasps, rasterize_targets

Predictor = Callable[[int, np.ndarray, Instruction], PredictionMaps]


@dataclass
class ScenePrediction:
    scene_id: int
    instruction: str
    category: str
    grasp: GraspRect
    correct: bool


@dataclass
class EvalReport:
    variant: str
    split: str
    correct: int
    total: int
    per_category: dict[str, float] = field(default_factory=dict)
    predictions: list[ScenePrediction] = field(default_factory=list, compare=False, repr=False)

    @property
    def rate(self) -> float:
        return 100.0 * self.correct / self.total if self.total else 0.0

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "split": self.split,
            "correct": self.correct,
            "total": self.total,
            "rate": self.rate,
            "per_category": dict(sorted(self.per_category.items())),
        }

    @classmethod
    def from_json(cls, d: dict) -> "EvalReport":
        rep = cls(d["variant"], d["split"], int(d["correct"]), int(d["total"]), dict(d["per_category"]))
        if abs(rep.rate - d.get("rate", rep.rate)) > 1e-9:
            raise EvaluationError(f"report rate {d['rate']} disagrees with {rep.correct}/{rep.total}")
        return rep


# ---------------------------------------------------------- instructions


def eval_target(ds: Dataset, split: str, scene_id: int, rng: np.random.Generator) -> tuple[str, str, bool]:
    """``(task, category, task_only)`` for one test scene under the split's rule.

    Instance and category-task scenes target a held-out unit; category
    scenes target a held-out category through a task-only instruction.
    """
    e = ds.entries[scene_id]
    cats = e.categories()
    targets = sorted(e.targets())
    if split == "instance":
        held = set(ds.held_out["instance"])
        targets = [(o, t) for o, t in targets if e.objects[o]["instance_id"] in held]
    elif split == "category":
        held = set(ds.held_out["category"])
        targets = [(o, t) for o, t in targets if cats[o] in held]
    elif split == "category_task":
        held = set(ds.held_out["category_task"])
        targets = [(o, t) for o, t in targets if (cats[o], t) in held]
    if not targets:
        raise SamplingError(f"scene {scene_id} has no valid {split} target")
    o, t = targets[int(rng.integers(len(targets)))]
    return t, cats[o], split == "category"


def eval_instruction(
    ds: Dataset,
    split: str,
    scene_id: int,
    seed: int,
    templates: Sequence[str],
    vocab: Vocabulary,
    t_max: int,
) -> tuple[Instruction, str]:
    rng = np.random.default_rng([seed, 0xE7A1, scene_id])
    task, cat, task_only = eval_target(ds, split, scene_id, rng)
    return generate_instruction(templates, task, None if task_only else cat, rng, vocab, t_max), cat


# ------------------------------------------------------------- predictors


def model_predictor(model: GraspNet) -> Predictor:
    def predict(scene_id: int, image: np.ndarray, inst: Instruction) -> PredictionMaps:
        return PredictionMaps.from_outputs(model.forward(image, inst.ids()))

    return predict


def oracle_predictor(ds: Dataset, config: ModelConfig, shrink: float = 2.0 / 3.0) -> Predictor:
    """Feeds the rasterized ground truth back as the prediction.

    Orientation and width are unsupervised off the positive pixels, so the
    oracle fills them from the nearest positive pixel; zeros there would
    only dilute the blurred width read out at the peak.
    """

    def predict(scene_id: int, image: np.ndarray, inst: Instruction) -> PredictionMaps:
        e = ds.entries[scene_id]
        cats = e.categories()
        t = rasterize_targets(e.grasps, [cats[o] for o in e.owners], inst, config, shrink)
        _, (ri, ci) = distance_transform_edt(~t.loss_mask, return_indices=True)
        theta = np.zeros(t.M_q.shape + (t.bins,), dtype=np.float32)
        theta[np.arange(ri.shape[0])[:, None], np.arange(ri.shape[1]), t.theta_bin[ri, ci]] = 1.0
        return PredictionMaps(t.M_q, theta, t.M_w[ri, ci])

    return predict


# ------------------------------------------------------------- evaluation


def evaluate(
    predictor: Predictor,
    dataset: Dataset,
    split: str,
    config: ModelConfig,
    vocab: Vocabulary,
    seed: int = 0,
    variant: str = "graspclip",
    part: str = "test",
    scene_ids: Sequence[int] | None = None,
    angle_thr: float = ANGLE_THRESHOLD_DEG,
    jaccard_thr: float = JACCARD_THRESHOLD,
    workers: int | None = None,
) -> EvalReport:
    """One instruction per scene, top-1 decoding, scored against compatible grasps.

    ``part="train"`` with the scene split rule is the overfit check on
    training scenes.
    """
    ids = list(scene_ids) if scene_ids is not None else dataset.ids(split, part)
    if not ids:
        raise EvaluationError(f"split {split!r} has no {part} scenes")
    templates = load_templates()
    rule = split if part == "test" else "scene"

    def one(sid: int) -> ScenePrediction:
        inst, cat = eval_instruction(dataset, rule, sid, seed, templates, vocab, config.t_max)
        e = dataset.entries[sid]
        cats = e.categories()
        gt = compatible_grasps(e.grasps, [cats[o] for o in e.owners], inst)
        g = decode_grasp(predictor(sid, dataset.image(sid), inst), config)
        ok = g.w > 0 and g.h > 0 and is_correct(g, gt, angle_thr, jaccard_thr)
        return ScenePrediction(sid, inst.text, cat, g, ok)

    n = workers or worker_count()
    if n > 1:
        with ThreadPoolExecutor(n) as pool:
            preds = list(pool.map(one, ids))
    else:
        preds = [one(s) for s in ids]
    per: dict[str, list[bool]] = {}
    for p in preds:
        per.setdefault(p.category, []).append(p.correct)
    per_category = {k: 100.0 * sum(v) / len(v) for k, v in sorted(per.items())}
    return EvalReport(variant, split, sum(p.correct for p in preds), len(preds), per_category, preds)


# ---------------------------------------------------------------- reports


def format_table(reports: Sequence[EvalReport]) -> str:
    """Rows are variants, columns are splits, cells are success rates to two decimals."""
    splits = list(dict.fromkeys(r.split for r in reports))
    variants = list(dict.fromkeys(r.variant for r in reports))
    cell = {(r.variant, r.split): f"{r.rate:.2f}" for r in reports}
    rows = [["variant", *splits]] + [[v, *(cell.get((v, s), "-") for s in splits)] for v in variants]
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for k, r in enumerate(rows):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def load_reports(path: str | Path) -> list[EvalReport]:
    doc = json.loads(Path(path).read_text())
    return [EvalReport.from_json(d) for d in (doc if isinstance(doc, list) else [doc])]


def draw_overlay(image: np.ndarray, pred: ScenePrediction, gt: Sequence[GraspRect] = ()) -> Image.Image:
    """Scene with ground-truth grasps in blue and the prediction in green (correct) or red."""
    im = Image.fromarray((np.clip(image, 0, 1) * 255).round().astype(np.uint8)).convert("RGB")
    scale = 4
    im = im.resize((im.width * scale, im.height * scale), Image.NEAREST)
    draw = ImageDraw.Draw(im)

    def poly(g: GraspRect, color, width):
        pts = [(float(x + 0.5) * scale, float(y + 0.5) * scale) for x, y in rect_corners(g)]
        draw.line(pts + pts[:1], fill=color, width=width)

    for g in gt:
        poly(g, (40, 90, 255), 1)
    poly(pred.grasp, (0, 200, 0) if pred.correct else (230, 20, 20), 2)
    return im


def emit_report(
    reports: Sequence[EvalReport],
    out_dir: str | Path | None = None,
    dataset: Dataset | None = None,
    overlays: bool = False,
) -> str:
    """Text table, plus ``report.json`` and optional overlays when ``out_dir`` is given.

    A single report is stored as one JSON object, several as a list.
    Overlays go to ``overlays/<scene_id>.png``, or ``overlays/<split>/``
    when more than one split is present.
    """
    if not reports:
        raise EvaluationError("no reports to emit")
    table = format_table(reports)
    if out_dir is None:
        return table
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = reports[0].to_json() if len(reports) == 1 else [r.to_json() for r in reports]
    (out / "report.json").write_text(json.dumps(doc, indent=1))
    (out / "report.txt").write_text(table + "\n")
    if overlays:
        if dataset is None:
            raise EvaluationError("overlays need the dataset images")
        nested = len({r.split for r in reports}) > 1 or len({r.variant for r in reports}) > 1
        for r in reports:
            d = out / "overlays"
            if nested:
                d = d / r.variant / r.split
            d.mkdir(parents=True, exist_ok=True)
            for p in r.predictions:
                e = dataset.entries[p.scene_id]
                draw_overlay(dataset.image(p.scene_id), p, e.grasps).save(d / f"{p.scene_id}.png")
    return table

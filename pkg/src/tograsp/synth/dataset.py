"""Dataset generation to disk and loading back.

Layout of a dataset directory::

    manifest.jsonl   one scene per line, sorted by scene_id
    scenes/<id>.png  8-bit RGB images
    catalog.json     categories, tasks and sampled instances
    splits.json      held-out units of each split type
    config.json      the generating DatasetConfig
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ConfigurationError, GenerationError
from ..geometry import GraspRect
from .scene import CLUTTER_LEVELS, SceneRecord, compose_scene, make_background
from .splits import SPLIT_TYPES, SceneUnits, SplitResult, build_splits
from .tools import (
    REFERENCE_SIZE,
    ToolCategory,
    ToolInstance,
    all_tasks,
    default_categories,
    part_masks,
    sample_instance,
)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("TOG_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class DatasetConfig:
    n_scenes: int = 500
    size: int = 128
    instances_per_category: int = 6
    objects_per_scene: dict[int, float] = field(default_factory=lambda: {1: 0.2, 2: 0.3, 3: 0.3, 4: 0.2})
    clutter_mix: dict[str, float] = field(default_factory=lambda: {"none": 0.6, "light": 0.3, "heavy": 0.1})
    noise_background_prob: float = 0.5
    split_ratio: float = 0.8
    seed: int = 0
    categories: list[ToolCategory] | None = None

    def validate(self) -> None:
        if self.n_scenes < 1:
            raise ConfigurationError("n_scenes must be >= 1")
        if self.size < 64 or self.size % 64:
            raise ConfigurationError(f"image size must be a positive multiple of 64, got {self.size}")
        if self.instances_per_category < 2:
            raise ConfigurationError("need >= 2 instances per category")
        if not self.objects_per_scene or any(not 1 <= int(k) <= 6 for k in self.objects_per_scene):
            raise ConfigurationError("objects_per_scene keys must lie in 1..6")
        if set(self.clutter_mix) - set(CLUTTER_LEVELS):
            raise ConfigurationError(f"clutter levels must be among {CLUTTER_LEVELS}")
        for name, dist in (("objects_per_scene", self.objects_per_scene), ("clutter_mix", self.clutter_mix)):
            p = np.array(list(dist.values()), dtype=float)
            if (p < 0).any() or not np.isclose(p.sum(), 1.0):
                raise ConfigurationError(f"{name} probabilities must be >= 0 and sum to 1")
        if not 0 < self.split_ratio < 1:
            raise ConfigurationError("split_ratio must lie in (0, 1)")

    def resolved_categories(self) -> list[ToolCategory]:
        return list(self.categories) if self.categories else default_categories()

    def to_json(self) -> dict:
        d = asdict(self)
        d["categories"] = [c.to_json() for c in self.resolved_categories()]
        d["objects_per_scene"] = {str(k): v for k, v in self.objects_per_scene.items()}
        return d

    @classmethod
    def from_json(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        if d.get("categories"):
            d["categories"] = [ToolCategory.from_json(c) for c in d["categories"]]
        if "objects_per_scene" in d:
            d["objects_per_scene"] = {int(k): float(v) for k, v in d["objects_per_scene"].items()}
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown dataset config keys: {sorted(unknown)}")
        return cls(**d)


def sample_catalog(cfg: DatasetConfig) -> list[ToolInstance]:
    rng = np.random.default_rng([cfg.seed, 0xCA7])
    scale = cfg.size / REFERENCE_SIZE
    out = []
    for cat in cfg.resolved_categories():
        for k in range(cfg.instances_per_category):
            out.append(sample_instance(cat, rng, f"{cat.name}-{k}", scale=scale))
    return out


def generate_scene(cfg: DatasetConfig, catalog: list[ToolInstance], scene_id: int) -> SceneRecord:
    """One scene as a pure function of ``(cfg.seed, scene_id)``."""
    rng = np.random.default_rng([cfg.seed, scene_id])
    counts = sorted(cfg.objects_per_scene)
    n = int(counts[rng.choice(len(counts), p=[cfg.objects_per_scene[c] for c in counts])])
    levels = sorted(cfg.clutter_mix)
    clutter = levels[rng.choice(len(levels), p=[cfg.clutter_mix[c] for c in levels])]
    picks = rng.choice(len(catalog), size=n, replace=False)
    instances = [catalog[i] for i in picks]
    background = make_background(cfg.size, rng, cfg.noise_background_prob)
    return compose_scene(instances, background, rng, clutter=clutter if n > 1 else "none", scene_id=scene_id)


def scene_image_name(scene_id: int) -> str:
    return f"scenes/{scene_id:05d}.png"


def make_dataset(cfg: DatasetConfig, out_dir: str | Path, workers: int | None = None) -> Path:
    """Generate ``cfg.n_scenes`` scenes plus splits and write them to ``out_dir``."""
    cfg.validate()
    out = Path(out_dir)
    try:
        (out / "scenes").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise GenerationError(f"cannot create dataset directory {out}: {exc}") from exc
    categories = cfg.resolved_categories()
    tasks = all_tasks(categories)
    catalog = sample_catalog(cfg)

    def work(sid: int):
        rec = generate_scene(cfg, catalog, sid)
        path = out / scene_image_name(sid)
        try:
            Image.fromarray(rec.image, mode="RGB").save(path, format="PNG")
        except OSError as exc:
            raise GenerationError(f"cannot write {path}: {exc}") from exc
        rec.image = None  # keep memory flat for large datasets
        return rec

    workers = workers or worker_count()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(work, range(cfg.n_scenes)))
    else:
        records = [work(i) for i in range(cfg.n_scenes)]

    units = [SceneUnits.from_record(r) for r in records]
    splits: dict[str, SplitResult] = {}
    for k, st in enumerate(SPLIT_TYPES):
        rng = np.random.default_rng([cfg.seed, 0x5917, k])
        splits[st] = build_splits(units, categories, tasks, st, cfg.split_ratio, rng)

    lines = []
    for r in records:
        lines.append(
            json.dumps(
                {
                    "scene_id": r.scene_id,
                    "image": scene_image_name(r.scene_id),
                    "size": cfg.size,
                    "objects": [p.to_json() for p in r.placements],
                    "grasps": [dict(g.to_json(), object_index=o) for g, o in zip(r.grasps, r.owners)],
                    "splits": {st: splits[st].tag(r.scene_id) for st in SPLIT_TYPES},
                }
            )
        )
    _write_text(out / "manifest.jsonl", "\n".join(lines) + "\n")
    _write_text(
        out / "catalog.json",
        json.dumps(
            {
                "categories": [c.to_json() for c in categories],
                "tasks": tasks,
                "instances": [i.to_json() for i in catalog],
            },
            indent=1,
        ),
    )
    held = {st: [list(u) if isinstance(u, tuple) else u for u in splits[st].held_out] for st in SPLIT_TYPES}
    _write_text(out / "splits.json", json.dumps(held, indent=1))
    _write_text(out / "config.json", json.dumps(cfg.to_json(), indent=1))
    return out


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise GenerationError(f"cannot write {path}: {exc}") from exc


# ----------------------------------------------------------------- loading


@dataclass
class SceneEntry:
    scene_id: int
    image_path: Path
    size: int
    objects: list[dict]
    grasps: list[GraspRect]
    owners: list[int]
    splits: dict[str, str]

    def categories(self) -> list[str]:
        return [o["category"] for o in self.objects]

    def targets(self) -> set[tuple[int, str]]:
        return {(o, t) for g, o in zip(self.grasps, self.owners) for t in g.tasks}


class Dataset:
    """A generated dataset directory with cached float images."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        manifest = self.root / "manifest.jsonl"
        try:
            text = manifest.read_text()
            catalog = json.loads((self.root / "catalog.json").read_text())
            held = json.loads((self.root / "splits.json").read_text())
        except OSError as exc:
            raise GenerationError(f"cannot read dataset at {self.root}: {exc}") from exc
        self.categories = [ToolCategory.from_json(c) for c in catalog["categories"]]
        by_name = {c.name: c for c in self.categories}
        self.instances = {
            d["instance_id"]: ToolInstance.from_json(d, by_name) for d in catalog.get("instances", [])
        }
        self.tasks: list[str] = list(catalog["tasks"])
        self.held_out = {
            "scene": [],
            "instance": list(held["instance"]),
            "category": list(held["category"]),
            "category_task": [tuple(p) for p in held["category_task"]],
        }
        self.entries: dict[int, SceneEntry] = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            d = json.loads(line)
            grasps = [GraspRect.from_json(g) for g in d["grasps"]]
            owners = [int(g["object_index"]) for g in d["grasps"]]
            self.entries[d["scene_id"]] = SceneEntry(
                d["scene_id"], self.root / d["image"], d["size"], d["objects"], grasps, owners, d["splits"]
            )
        self._cache: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def size(self) -> int:
        return next(iter(self.entries.values())).size

    def category(self, name: str) -> ToolCategory:
        for c in self.categories:
            if c.name == name:
                return c
        raise KeyError(name)

    def ids(self, split_type: str, part: str) -> list[int]:
        return sorted(i for i, e in self.entries.items() if e.splits[split_type] == part)

    def footprint(self, scene_id: int, object_index: int) -> np.ndarray:
        """Boolean mask of one placed object, ignoring occlusion by later objects."""
        e = self.entries[scene_id]
        o = e.objects[object_index]
        handle, head = part_masks(self.instances[o["instance_id"]], e.size, e.size, o["x"], o["y"], o["rot_deg"])
        return handle | head

    def image(self, scene_id: int) -> np.ndarray:
        """Float32 image in ``[0, 1]``, shape ``S x S x 3``."""
        hit = self._cache.get(scene_id)
        if hit is None:
            path = self.entries[scene_id].image_path
            try:
                with Image.open(path) as im:
                    hit = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
            except OSError as exc:
                raise GenerationError(f"cannot read image {path}: {exc}") from exc
            self._cache[scene_id] = hit
        return hit

"""Train/test partitions over scenes, instances, categories and category-task pairs.

Each split holds out a fraction of some unit. A scene goes to ``test`` when
it offers at least one held-out unit as a grasp target; it goes to ``train``
when it shows no held-out unit at all (``category_task`` instead partitions
scenes first and masks the held-out pairs out of training instructions).
Scenes that fit neither rule are tagged ``unused``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from ..errors import SplitError

SPLIT_TYPES = ("scene", "instance", "category", "category_task")


@dataclass(frozen=True)
class SceneUnits:
    """What a scene shows: objects as (category, instance_id) and targets as (object_index, task)."""

    scene_id: int
    objects: tuple[tuple[str, str], ...]
    targets: frozenset[tuple[int, str]]

    @classmethod
    def from_record(cls, rec) -> "SceneUnits":
        objects = tuple((p.instance.category.name, p.instance.instance_id) for p in rec.placements)
        targets = frozenset((o, t) for g, o in zip(rec.grasps, rec.owners) for t in g.tasks)
        return cls(rec.scene_id, objects, targets)


@dataclass(frozen=True)
class SplitResult:
    split_type: str
    train: tuple[int, ...]
    test: tuple[int, ...]
    held_out: tuple

    def __iter__(self):
        yield self.train
        yield self.test

    def tag(self, scene_id: int) -> str:
        if scene_id in self._train_set:
            return "train"
        if scene_id in self._test_set:
            return "test"
        return "unused"

    @cached_property
    def _train_set(self):
        return frozenset(self.train)

    @cached_property
    def _test_set(self):
        return frozenset(self.test)


def holdout_count(n: int, ratio: float) -> int:
    return max(1, int(round(n * (1 - ratio))))


def _pick_pairs(pairs: list[tuple[str, str]], k: int, rng: np.random.Generator) -> list[tuple[str, str]]:
    """Greedy random pick of ``k`` pairs whose category and task keep other training partners."""
    order = rng.permutation(len(pairs))
    chosen: list[tuple[str, str]] = []
    remaining = set(pairs)
    rejected = []
    for i in order:
        cat, task = pairs[i]
        rest = remaining - {(cat, task)}
        if any(c == cat for c, _ in rest) and any(t == task for _, t in rest):
            chosen.append((cat, task))
            remaining = rest
            if len(chosen) == k:
                return sorted(chosen)
        else:
            rejected.append((cat, task))
    raise SplitError(
        f"cannot hold out {k} category-task pairs; pair {rejected[-1] if rejected else pairs[0]} "
        "would leave its category or task without a training partner"
    )


def _pick_categories(categories, k: int, rng: np.random.Generator, attempts: int = 200) -> list[str]:
    names = [c.name for c in categories]
    if len(names) < 5:
        raise SplitError(f"category split needs >= 5 categories, got {len(names)}")
    for _ in range(attempts):
        held = set(rng.choice(names, size=k, replace=False).tolist())
        seen = {t for c in categories if c.name not in held for t in c.task_affordances}
        if all(t in seen for c in categories if c.name in held for t in c.task_affordances):
            return sorted(held)
    raise SplitError(f"no choice of {k} held-out categories keeps every task in training")


def _pick_instances(objects: Iterable[tuple[str, str]], ratio: float, rng: np.random.Generator) -> list[str]:
    by_cat: dict[str, set[str]] = {}
    for cat, iid in objects:
        by_cat.setdefault(cat, set()).add(iid)
    ids = sorted({i for s in by_cat.values() for i in s})
    if len(ids) < 5:
        raise SplitError(f"instance split needs >= 5 instances, got {len(ids)}")
    k = holdout_count(len(ids), ratio)
    cat_of = {i: c for c, s in by_cat.items() for i in s}
    held: list[str] = []
    for i in rng.permutation(len(ids)):
        iid = ids[i]
        cat = cat_of[iid]
        if sum(1 for h in held if cat_of[h] == cat) + 1 >= len(by_cat[cat]):
            continue  # keep a training instance in every category
        held.append(iid)
        if len(held) == k:
            return sorted(held)
    raise SplitError(f"cannot hold out {k} instances while keeping each category in training")


def build_splits(
    records: Sequence,
    categories,
    tasks: Sequence[str],
    split_type: str,
    ratio: float = 0.8,
    rng: np.random.Generator | None = None,
) -> SplitResult:
    if split_type not in SPLIT_TYPES:
        raise SplitError(f"unknown split type {split_type!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    units = [r if isinstance(r, SceneUnits) else SceneUnits.from_record(r) for r in records]
    if not units:
        raise SplitError("no scenes to split")

    if split_type in ("scene", "category_task"):
        ids = [u.scene_id for u in units]
        n_test = holdout_count(len(ids), ratio)
        perm = rng.permutation(len(ids))
        test_ids = {ids[i] for i in perm[:n_test]}
        train = sorted(set(ids) - test_ids)
        if split_type == "scene":
            return SplitResult("scene", tuple(train), tuple(sorted(test_ids)), ())
        pairs = sorted({(c.name, t) for c in categories for t in c.task_affordances if t in set(tasks)})
        held = _pick_pairs(pairs, holdout_count(len(pairs), ratio), rng)
        held_set = set(held)
        test = sorted(
            u.scene_id
            for u in units
            if u.scene_id in test_ids and any((u.objects[o][0], t) in held_set for o, t in u.targets)
        )
        return SplitResult("category_task", tuple(train), tuple(test), tuple(held))

    if split_type == "instance":
        held = _pick_instances((o for u in units for o in u.objects), ratio, rng)
        key = 1
    else:
        held = _pick_categories(categories, holdout_count(len(categories), ratio), rng)
        key = 0
    held_set = set(held)
    train, test = [], []
    for u in units:
        shown = {o[key] for o in u.objects}
        if not shown & held_set:
            train.append(u.scene_id)
        elif any(u.objects[o][key] in held_set for o, _ in u.targets):
            test.append(u.scene_id)
    return SplitResult(split_type, tuple(train), tuple(test), tuple(held))

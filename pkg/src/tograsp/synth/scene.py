"""Grasp annotation and multi-object scene composition."""

from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import CompositionError, PlacementError
from ..geometry import GraspRect, normalize_angle, rasterize_rect
from .tools import REFERENCE_SIZE, ToolInstance, part_masks, render_instance

CLUTTER_LEVELS = ("none", "light", "heavy")
OCCLUSION_DROP = 0.5
MAX_ATTEMPTS = 100
HANDLE_GRASPS = 6
HEAD_GRASPS = 4


@dataclass(frozen=True)
class Placement:
    instance: ToolInstance
    x: float
    y: float
    rot: float

    def to_json(self) -> dict:
        return {
            "category": self.instance.category.name,
            "instance_id": self.instance.instance_id,
            "x": round(float(self.x), 4),
            "y": round(float(self.y), 4),
            "rot_deg": round(float(self.rot), 4),
        }


@dataclass
class SceneRecord:
    scene_id: int
    image: np.ndarray  # uint8, S x S x 3
    placements: list[Placement]
    grasps: list[GraspRect]
    owners: list[int]  # placement index of each grasp
    split_tags: dict[str, str] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.image.shape[0]


def _head_width_at(inst: ToolInstance, hv: float) -> float:
    hl, hw = inst.head_len, inst.head_width
    if inst.category.head_shape == "bowl":
        r = (hv - hl / 2) / (hl / 2)
        return hw * math.sqrt(max(0.0, 1 - r * r))
    return hw


def annotate_grasps(
    inst: ToolInstance,
    placement: tuple[float, float, float],
    size: int,
    grasp_h: float | None = None,
    margin: float | None = None,
) -> list[GraspRect]:
    """Up to ten grasps along the handle and head centre-lines.

    Handle grasps carry the category's functional tasks, head grasps carry
    ``handover``. The opening axis crosses the part, so ``theta`` is the
    placement rotation mod 180 and ``w`` is the local part thickness plus a
    margin. Grasps whose centre pixel misses the rendered part are dropped.
    """
    x, y, rot = placement
    scale = size / REFERENCE_SIZE
    grasp_h = 4.0 * scale if grasp_h is None else grasp_h
    margin = 4.0 * scale if margin is None else margin
    theta = normalize_angle(rot)
    t = math.radians(rot)
    axis = np.array([math.sin(t), math.cos(t)])  # along the tool, handle end -> tip
    start = np.array([x, y]) - axis * inst.length / 2
    handle, head = part_masks(inst, size, size, x, y, rot)

    cat = inst.category
    specs = []
    for i in range(HANDLE_GRASPS):
        v = inst.handle_len * (i + 0.5) / HANDLE_GRASPS
        specs.append((v, inst.handle_width, cat.tasks_on("handle"), handle))
    # blades taper, so head grasps stay on the full-width part
    reach = 0.6 if cat.head_shape == "blade" else 1.0
    for i in range(HEAD_GRASPS):
        hv = inst.head_len * reach * (i + 0.5) / HEAD_GRASPS
        specs.append((inst.handle_len + hv, _head_width_at(inst, hv), cat.tasks_on("head"), head))

    out = []
    for v, thick, tasks, mask in specs:
        if not tasks:
            continue
        cx, cy = start + axis * v
        r, c = int(round(cy)), int(round(cx))
        if not (0 <= r < size and 0 <= c < size) or not mask[r, c]:
            continue
        g = GraspRect(float(cx), float(cy), theta, float(thick + margin), float(grasp_h), tasks)
        g.validate(size)
        out.append(g)
    return out


def make_background(size: int, rng: np.random.Generator, noise_prob: float = 0.5) -> np.ndarray:
    """Flat or smooth-noise background in dark, muted colours."""
    hue = rng.uniform(0, 1)
    base = np.array(_muted(hue, rng.uniform(0.05, 0.3), rng.uniform(0.18, 0.45)))
    img = np.broadcast_to(base, (size, size, 3)).astype(np.float64)
    if rng.uniform() < noise_prob:
        field_ = gaussian_filter(rng.standard_normal((size, size)), sigma=size / 24, mode="wrap")
        field_ /= np.abs(field_).max() + 1e-12
        img = img + field_[..., None] * rng.uniform(8, 20)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def _muted(h, s, v):
    return [c * 255 for c in colorsys.hsv_to_rgb(h, s, v)]


def _overlap_ok(foot: np.ndarray, placed: list[np.ndarray], clutter: str) -> bool:
    if clutter == "heavy":
        return True
    for other in placed:
        inter = np.count_nonzero(foot & other)
        if clutter == "none":
            if inter:
                return False
        else:
            union = np.count_nonzero(foot | other)
            if union and inter / union > 0.1:
                return False
    return True


def compose_scene(
    instances: list[ToolInstance],
    background: np.ndarray,
    rng: np.random.Generator,
    clutter: str = "none",
    scene_id: int = 0,
    grasp_h: float | None = None,
) -> SceneRecord:
    """Place ``instances`` on ``background`` by rejection sampling, then annotate.

    Tools are drawn in order (later ones occlude earlier ones). A grasp is
    dropped when at least half of its footprint on the owning tool is covered
    by later tools, or when its centre pixel is covered.
    """
    if not 1 <= len(instances) <= 6:
        raise CompositionError(f"a scene holds 1 to 6 objects, got {len(instances)}")
    if clutter not in CLUTTER_LEVELS:
        raise CompositionError(f"unknown clutter level {clutter!r}")
    size = background.shape[0]
    canvas = background.copy()
    placements: list[Placement] = []
    feet: list[np.ndarray] = []
    for inst in instances:
        half = inst.length / 2 + 1
        if 2 * half >= size:
            raise CompositionError(f"{inst.instance_id} is longer than the canvas")
        for _ in range(MAX_ATTEMPTS):
            x = rng.uniform(half, size - 1 - half)
            y = rng.uniform(half, size - 1 - half)
            rot = rng.uniform(0, 360)
            h, d = part_masks(inst, size, size, x, y, rot)
            foot = h | d
            if _overlap_ok(foot, feet, clutter):
                break
        else:
            raise CompositionError(
                f"could not place {inst.instance_id} after {MAX_ATTEMPTS} attempts (clutter={clutter})"
            )
        try:
            render_instance(inst, canvas, x, y, rot)
        except PlacementError as exc:  # pragma: no cover - positions keep tools inside
            raise CompositionError(str(exc)) from exc
        placements.append(Placement(inst, x, y, rot))
        feet.append(foot)

    grasps, owners = [], []
    for i, p in enumerate(placements):
        later = np.zeros((size, size), dtype=bool)
        for f in feet[i + 1 :]:
            later |= f
        for g in annotate_grasps(p.instance, (p.x, p.y, p.rot), size, grasp_h):
            if later.any():
                if later[int(round(g.y)), int(round(g.x))]:
                    continue
                region = rasterize_rect(g, size, size) & feet[i]
                n = np.count_nonzero(region)
                if n == 0 or np.count_nonzero(region & later) / n >= OCCLUSION_DROP:
                    continue
            grasps.append(g)
            owners.append(i)
    return SceneRecord(scene_id, canvas, placements, grasps, owners)

"""Procedural tool categories, instances and their rendering.

A tool lies along its *major axis*; at placement rotation ``rot`` the major
axis points along ``(sin rot, cos rot)`` and the across-axis along
``(cos rot, -sin rot)``, which is also the opening axis of every grasp on it.
So a grasp on a tool placed at ``rot`` has ``theta == rot mod 180``.
Dimensions are in pixels at the 128 px reference canvas and scale with ``S``.
"""

from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass

import numpy as np

from ..errors import PlacementError

HEAD_SHAPES = ("blade", "bowl", "disk", "tines", "bristles")
REFERENCE_SIZE = 128

# head colour families by shape: low saturation, bright (never a handle colour)
HEAD_BASE = {
    "blade": (196, 200, 206),
    "bowl": (214, 208, 190),
    "disk": (178, 186, 172),
    "tines": (226, 226, 232),
    "bristles": (204, 190, 200),
}


@dataclass(frozen=True)
class ToolCategory:
    name: str
    head_shape: str
    handle_len: tuple[float, float]
    handle_width: tuple[float, float]
    head_len: tuple[float, float]
    head_width: tuple[float, float]
    task_affordances: dict[str, str]
    handle_hue: float = 0.0

    def __post_init__(self):
        if self.head_shape not in HEAD_SHAPES:
            raise ValueError(f"unknown head shape {self.head_shape!r}")
        if len(self.task_affordances) < 2 or self.task_affordances.get("handover") != "head":
            raise ValueError(f"{self.name}: needs >= 2 tasks including handover on the head")
        for task, part in self.task_affordances.items():
            if task != "handover" and part != "handle":
                raise ValueError(f"{self.name}: functional task {task!r} must map to the handle")

    @property
    def tasks(self) -> list[str]:
        return sorted(self.task_affordances)

    def tasks_on(self, part: str) -> frozenset[str]:
        return frozenset(t for t, p in self.task_affordances.items() if p == part)

    def render_params(self) -> tuple:
        return (self.head_shape, self.handle_len, self.handle_width, self.head_len, self.head_width)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "head_shape": self.head_shape,
            "handle_len": list(self.handle_len),
            "handle_width": list(self.handle_width),
            "head_len": list(self.head_len),
            "head_width": list(self.head_width),
            "task_affordances": dict(sorted(self.task_affordances.items())),
            "handle_hue": self.handle_hue,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ToolCategory":
        return cls(
            d["name"],
            d["head_shape"],
            tuple(d["handle_len"]),
            tuple(d["handle_width"]),
            tuple(d["head_len"]),
            tuple(d["head_width"]),
            dict(d["task_affordances"]),
            d.get("handle_hue", 0.0),
        )


def _aff(*functional: str) -> dict[str, str]:
    d = {t: "handle" for t in functional}
    d["handover"] = "head"
    return d


def default_categories() -> list[ToolCategory]:
    """Eight kitchen tools over five head shapes and ten tasks."""
    specs = [
        ("knife", "blade", (26, 32), (5, 6), (22, 28), (7, 9), _aff("cut", "chop")),
        ("cleaver", "blade", (22, 27), (6, 7.5), (18, 22), (13, 16), _aff("chop", "cut")),
        ("spoon", "bowl", (28, 34), (4, 5), (12, 15), (9, 11), _aff("scoop", "dispense", "stir")),
        ("ladle", "bowl", (34, 40), (4, 5), (15, 18), (14, 17), _aff("scoop", "dispense", "stir")),
        ("spatula", "disk", (28, 34), (5, 6), (13, 16), (13, 16), _aff("flip", "saute")),
        ("turner", "disk", (30, 36), (4, 5), (18, 22), (10, 12), _aff("flip", "saute")),
        ("fork", "tines", (28, 34), (4, 5), (12, 15), (8, 10), _aff("pierce", "stir")),
        ("brush", "bristles", (26, 32), (6, 7), (14, 18), (10, 12), _aff("scrub", "stir")),
    ]
    n = len(specs)
    return [
        ToolCategory(name, shape, hl, hw, dl, dw, aff, handle_hue=i / n)
        for i, (name, shape, hl, hw, dl, dw, aff) in enumerate(specs)
    ]


def all_tasks(categories: list[ToolCategory]) -> list[str]:
    return sorted({t for c in categories for t in c.task_affordances})


@dataclass(frozen=True)
class ToolInstance:
    category: ToolCategory
    instance_id: str
    handle_len: float
    handle_width: float
    head_len: float
    head_width: float
    handle_color: tuple[int, int, int]
    head_color: tuple[int, int, int]

    @property
    def length(self) -> float:
        return self.handle_len + self.head_len

    def to_json(self) -> dict:
        return {
            "category": self.category.name,
            "instance_id": self.instance_id,
            "handle_len": self.handle_len,
            "handle_width": self.handle_width,
            "head_len": self.head_len,
            "head_width": self.head_width,
            "handle_color": list(self.handle_color),
            "head_color": list(self.head_color),
        }

    @classmethod
    def from_json(cls, d: dict, categories: dict[str, ToolCategory]) -> "ToolInstance":
        return cls(
            categories[d["category"]],
            d["instance_id"],
            d["handle_len"],
            d["handle_width"],
            d["head_len"],
            d["head_width"],
            tuple(d["handle_color"]),
            tuple(d["head_color"]),
        )


def handle_color(hue: float, rng: np.random.Generator) -> tuple[int, int, int]:
    """Saturated colour near ``hue``; saturation >= 0.65 keeps it off the head palette."""
    h = (hue + rng.uniform(-0.02, 0.02)) % 1.0
    s = rng.uniform(0.7, 0.95)
    v = rng.uniform(0.55, 0.9)
    r, g, b = colorsys.hsv_to_rgb(h, s, v)
    return int(round(r * 255)), int(round(g * 255)), int(round(b * 255))


def head_color(shape: str, rng: np.random.Generator) -> tuple[int, int, int]:
    base = np.array(HEAD_BASE[shape], dtype=float)
    c = np.clip(base + rng.uniform(-10, 10), 150, 240)
    return tuple(int(round(v)) for v in c)


def is_handle_color(rgb) -> bool:
    r, g, b = (np.asarray(rgb, dtype=float) / 255.0).tolist()
    _, s, _ = colorsys.rgb_to_hsv(r, g, b)
    return s >= 0.6


def sample_instance(category: ToolCategory, rng: np.random.Generator, instance_id: str = "", scale: float = 1.0) -> ToolInstance:
    def u(lo_hi):
        return float(rng.uniform(*lo_hi)) * scale

    return ToolInstance(
        category=category,
        instance_id=instance_id or f"{category.name}-0",
        handle_len=u(category.handle_len),
        handle_width=u(category.handle_width),
        head_len=u(category.head_len),
        head_width=u(category.head_width),
        handle_color=handle_color(category.handle_hue, rng),
        head_color=head_color(category.head_shape, rng),
    )


# ---------------------------------------------------------------- rendering


def local_coords(inst: ToolInstance, H: int, W: int, x: float, y: float, rot: float):
    """Per-pixel (across, along) coordinates in the tool frame.

    ``along`` runs from 0 at the handle end to ``inst.length`` at the head tip;
    the tool's centre sits at ``(x, y)``.
    """
    t = math.radians(rot)
    c, s = math.cos(t), math.sin(t)
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    dx, dy = xs - x, ys - y
    across = dx * c - dy * s
    along = dx * s + dy * c + inst.length / 2.0
    return across, along


def part_masks(inst: ToolInstance, H: int, W: int, x: float, y: float, rot: float):
    """Boolean (handle, head) masks of the tool placed at ``(x, y, rot)``."""
    u, v = local_coords(inst, H, W, x, y, rot)
    L = inst.handle_len
    handle = (np.abs(u) <= inst.handle_width / 2) & (v >= 0) & (v <= L)
    hv = v - L
    hl, hw = inst.head_len, inst.head_width
    shape = inst.category.head_shape
    if shape == "blade":
        # straight spine, edge tapering to a point over the last 40%
        taper = np.clip((hl - hv) / (0.4 * hl), 0, 1)
        head = (hv >= 0) & (hv <= hl) & (u >= -hw / 2) & (u <= -hw / 2 + hw * taper)
    elif shape == "bowl":
        head = ((u / (hw / 2)) ** 2 + ((hv - hl / 2) / (hl / 2)) ** 2) <= 1.0
    elif shape == "disk":
        r = min(hw, hl) * 0.2
        cu = np.clip(np.abs(u), None, hw / 2 - r)
        cv = np.clip(hv, r, hl - r)
        head = (np.abs(u) <= hw / 2) & (hv >= 0) & (hv <= hl) & (
            (np.abs(u) - cu) ** 2 + (hv - cv) ** 2 <= r * r
        )
    elif shape == "tines":
        base = (np.abs(u) <= hw / 2) & (hv >= 0) & (hv <= hl * 0.3)
        pitch = hw / 3.0
        prong = np.abs(((u + hw / 2) % pitch) - pitch / 2) >= pitch * 0.2
        head = base | ((np.abs(u) <= hw / 2) & (hv > hl * 0.3) & (hv <= hl) & ~prong)
    else:  # bristles
        head = (np.abs(u) <= hw / 2) & (hv >= 0) & (hv <= hl)
    return handle, head & ~handle


def render_instance(
    inst: ToolInstance,
    canvas: np.ndarray,
    x: float,
    y: float,
    rot: float,
    min_inside: float = 0.9,
):
    """Draw ``inst`` over ``canvas`` in place; returns the footprint mask.

    Raises :class:`PlacementError` if less than ``min_inside`` of the tool's
    pixels fall on the canvas, counted against the same placement on a
    canvas padded by the tool's reach.
    """
    H, W = canvas.shape[:2]
    handle, head = part_masks(inst, H, W, x, y, rot)
    foot = handle | head
    pad = int(math.ceil(math.hypot(inst.length / 2, max(inst.head_width, inst.handle_width)))) + 1
    ph, pd = part_masks(inst, H + 2 * pad, W + 2 * pad, x + pad, y + pad, rot)
    area = np.count_nonzero(ph | pd)
    if foot.sum() < min_inside * area:
        raise PlacementError(
            f"{inst.instance_id} at ({x:.1f}, {y:.1f}, {rot:.1f}) is less than {min_inside:.0%} inside"
        )
    canvas[handle] = inst.handle_color
    canvas[head] = inst.head_color
    if inst.category.head_shape == "bristles":
        # darker stripes across the bristle block, still in the head palette
        u, v = local_coords(inst, H, W, x, y, rot)
        stripe = head & ((np.floor((v - inst.handle_len) / 2.0) % 2) == 0)
        canvas[stripe] = tuple(max(150, c - 30) for c in inst.head_color)
    return foot


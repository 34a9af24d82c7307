"""Oriented grasp rectangles: corners, Jaccard overlap, angle bins, rasterization.

Image coordinates: ``x`` is the column, ``y`` the row, origin at the top-left
pixel, and pixel ``(r, c)`` is centred on ``(x=c, y=r)``. A rectangle at
angle ``theta`` has its opening (``w``) axis along ``(cos t, -sin t)`` and its
jaw (``h``) axis along ``(sin t, cos t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, EvaluationError

ANGLE_THRESHOLD_DEG = 30.0
JACCARD_THRESHOLD = 0.25


@dataclass(frozen=True)
class GraspRect:
    x: float
    y: float
    theta: float
    w: float
    h: float
    tasks: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "tasks", frozenset(self.tasks))

    def validate(self, size: int | None = None) -> None:
        if not (self.w > 0 and self.h > 0):
            raise DomainError(f"grasp needs w > 0 and h > 0, got w={self.w}, h={self.h}")
        if not 0.0 <= self.theta < 180.0:
            raise DomainError(f"grasp theta {self.theta} outside [0, 180)")
        if size is not None and not (0 <= self.x <= size - 1 and 0 <= self.y <= size - 1):
            raise DomainError(f"grasp centre ({self.x}, {self.y}) outside a {size}px image")

    def to_json(self) -> dict:
        return {
            "x": float(self.x),
            "y": float(self.y),
            "theta_deg": float(self.theta),
            "w": float(self.w),
            "h": float(self.h),
            "tasks": sorted(self.tasks),
        }

    @classmethod
    def from_json(cls, d: dict) -> "GraspRect":
        return cls(d["x"], d["y"], d["theta_deg"], d["w"], d["h"], frozenset(d.get("tasks", ())))


@dataclass(frozen=True)
class OrientationBins:
    count: int = 120
    span_deg: float = 180.0

    def __post_init__(self):
        if self.count < 2:
            raise ValueError(f"need at least 2 orientation bins, got {self.count}")

    @property
    def width(self) -> float:
        return self.span_deg / self.count


def normalize_angle(theta: float) -> float:
    t = math.fmod(theta, 180.0)
    if t < 0:
        t += 180.0
    return 0.0 if t >= 180.0 else t


def rect_corners(g: GraspRect) -> np.ndarray:
    """Four corners, shape ``(4, 2)``, with positive shoelace area in (x, y)."""
    t = math.radians(g.theta)
    c, s = math.cos(t), math.sin(t)
    local = np.array(
        [[-g.w / 2, -g.h / 2], [g.w / 2, -g.h / 2], [g.w / 2, g.h / 2], [-g.w / 2, g.h / 2]]
    )
    rot = np.array([[c, s], [-s, c]])  # columns: w axis, h axis
    return local @ rot.T + np.array([g.x, g.y])


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` against convex CCW ``clip``."""
    out = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not out:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp, out = out, []

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        prev = inp[-1]
        sp = side(prev)
        for cur in inp:
            sc = side(cur)
            if sc >= 0:
                if sp < 0:
                    out.append(_cross_point(prev, cur, sp, sc))
                out.append(cur)
            elif sp >= 0:
                out.append(_cross_point(prev, cur, sp, sc))
            prev, sp = cur, sc
    return np.array(out, dtype=float).reshape(-1, 2)


def _cross_point(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def jaccard(g: GraspRect, gt: GraspRect) -> float:
    a, b = rect_corners(g), rect_corners(gt)
    area_a, area_b = polygon_area(a), polygon_area(b)
    if area_a <= 0 or area_b <= 0:
        raise DomainError("jaccard of a zero-area rectangle")
    inter = polygon_area(clip_convex(a, b))
    inter = min(max(inter, 0.0), area_a, area_b)
    return inter / (area_a + area_b - inter)


def angle_diff(a: float, b: float) -> float:
    """Angular distance modulo 180 degrees, in ``[0, 90]``."""
    d = abs(math.fmod(a - b, 180.0))
    return min(d, 180.0 - d)


def is_correct(
    g: GraspRect,
    candidates: Iterable[GraspRect],
    angle_thr: float = ANGLE_THRESHOLD_DEG,
    jaccard_thr: float = JACCARD_THRESHOLD,
) -> bool:
    """True iff some candidate is within ``angle_thr`` (strict) and overlaps above ``jaccard_thr`` (strict)."""
    cands = list(candidates)
    if not cands:
        raise EvaluationError("is_correct needs at least one ground-truth grasp")
    for gt in cands:
        if angle_diff(g.theta, gt.theta) < angle_thr and jaccard(g, gt) > jaccard_thr:
            return True
    return False


def bin_encode(theta: float, bins: OrientationBins = OrientationBins()) -> int:
    t = math.fmod(theta, bins.span_deg)
    if t < 0:
        t += bins.span_deg
    return min(int(t // bins.width), bins.count - 1)


def bin_decode(index: int, bins: OrientationBins = OrientationBins()) -> float:
    if not 0 <= index < bins.count:
        raise IndexError(f"orientation bin {index} outside [0, {bins.count})")
    return (index + 0.5) * bins.width


def rasterize_rect(g: GraspRect, H: int, W: int, shrink: float = 0.0) -> np.ndarray:
    """Boolean mask of pixels whose centres fall inside ``g`` with ``w`` scaled by ``1 - shrink``."""
    if not 0.0 <= shrink < 1.0:
        raise ValueError(f"shrink must lie in [0, 1), got {shrink}")
    t = math.radians(g.theta)
    c, s = math.cos(t), math.sin(t)
    half_w = g.w * (1.0 - shrink) / 2.0
    half_h = g.h / 2.0
    reach = math.hypot(half_w, half_h) + 1
    x0, x1 = max(0, int(math.floor(g.x - reach))), min(W - 1, int(math.ceil(g.x + reach)))
    y0, y1 = max(0, int(math.floor(g.y - reach))), min(H - 1, int(math.ceil(g.y + reach)))
    mask = np.zeros((H, W), dtype=bool)
    if x0 > x1 or y0 > y1:
        return mask
    ys, xs = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    dx, dy = xs - g.x, ys - g.y
    along_w = dx * c - dy * s
    along_h = dx * s + dy * c
    eps = 1e-9
    mask[y0 : y1 + 1, x0 : x1 + 1] = (np.abs(along_w) <= half_w + eps) & (np.abs(along_h) <= half_h + eps)
    return mask


def supersampled_jaccard(g: GraspRect, gt: GraspRect, factor: int = 4) -> float:
    """Pixel-count Jaccard at ``factor`` samples per unit length; a testing oracle."""
    pts = np.vstack([rect_corners(g), rect_corners(gt)])
    lo = np.floor(pts.min(axis=0)) - 1
    hi = np.ceil(pts.max(axis=0)) + 1
    size = (hi - lo) * factor
    def scaled(r: GraspRect) -> GraspRect:
        return GraspRect((r.x - lo[0]) * factor, (r.y - lo[1]) * factor, r.theta, r.w * factor, r.h * factor)

    H, W = int(size[1]) + 1, int(size[0]) + 1
    a = rasterize_rect(scaled(g), H, W)
    b = rasterize_rect(scaled(gt), H, W)
    union = np.count_nonzero(a | b)
    return np.count_nonzero(a & b) / union if union else 0.0


def transform_rect(g: GraspRect, dx: float, dy: float, rot_deg: float, about: Sequence[float] = (0.0, 0.0)) -> GraspRect:
    """Rotate ``g`` by ``rot_deg`` (same sense as ``theta``) about ``about``, then translate."""
    t = math.radians(rot_deg)
    c, s = math.cos(t), math.sin(t)
    px, py = g.x - about[0], g.y - about[1]
    nx = px * c + py * s + about[0] + dx
    ny = -px * s + py * c + about[1] + dy
    return GraspRect(nx, ny, normalize_angle(g.theta + rot_deg), g.w, g.h, g.tasks)

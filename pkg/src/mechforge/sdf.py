"""Planar signed distance functions.

Shapes are immutable expression trees built from a handful of mechanical
primitives, min/max booleans, rigid transforms and offsets. Every node can be
evaluated at a single point or at an ``(..., 2)`` array of points; values are
negative inside, zero on the boundary and positive outside. All lengths are
millimetres.

Distances are exact for :class:`Circle`, :class:`Rectangle`, :class:`Balk`
and :class:`Ring`. Gears and boolean results only guarantee the sign.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Aabb2",
    "Balk",
    "Boolean",
    "Circle",
    "Gear",
    "Offset",
    "Rectangle",
    "RigidTransform2",
    "Ring",
    "Sdf2",
    "Transformed",
    "bounding_box",
    "difference",
    "evaluate",
    "intersection",
    "offset",
    "transform",
    "union",
]


def _as_points(p) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    if arr.shape[-1:] != (2,):
        raise ValueError(f"points must have a trailing dimension of 2, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class RigidTransform2:
    """Rotation about the origin followed by a translation."""

    rotation: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    @classmethod
    def identity(cls) -> RigidTransform2:
        return cls()

    @classmethod
    def translation(cls, x: float, y: float) -> RigidTransform2:
        return cls(0.0, float(x), float(y))

    @classmethod
    def rotation_about_origin(cls, angle: float) -> RigidTransform2:
        return cls(float(angle), 0.0, 0.0)

    def apply(self, p) -> np.ndarray:
        pts = _as_points(p)
        if self.rotation == 0.0:
            return pts + np.array([self.tx, self.ty])
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        x, y = pts[..., 0], pts[..., 1]
        return np.stack([c * x - s * y + self.tx, s * x + c * y + self.ty], axis=-1)

    def inverse(self) -> RigidTransform2:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        # R^-1 (p - t) = R^T p - R^T t
        return RigidTransform2(
            -self.rotation,
            -(c * self.tx + s * self.ty),
            -(-s * self.tx + c * self.ty),
        )

    def compose(self, other: RigidTransform2) -> RigidTransform2:
        """Return ``self ∘ other``: apply ``other`` first, then ``self``."""
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return RigidTransform2(
            self.rotation + other.rotation,
            c * other.tx - s * other.ty + self.tx,
            s * other.tx + c * other.ty + self.ty,
        )

    def __matmul__(self, other: RigidTransform2) -> RigidTransform2:
        return self.compose(other)


@dataclass(frozen=True)
class Aabb2:
    lo: tuple[float, float]
    hi: tuple[float, float]

    def __post_init__(self):
        if self.lo[0] > self.hi[0] or self.lo[1] > self.hi[1]:
            raise ValueError(f"inverted box {self.lo} > {self.hi}")

    @property
    def width(self) -> float:
        return self.hi[0] - self.lo[0]

    @property
    def height(self) -> float:
        return self.hi[1] - self.lo[1]

    @property
    def area(self) -> float:
        return self.width * self.height

    def corners(self) -> np.ndarray:
        (x0, y0), (x1, y1) = self.lo, self.hi
        return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])

    def contains(self, p, tol: float = 0.0) -> np.ndarray:
        pts = _as_points(p)
        return (
            (pts[..., 0] >= self.lo[0] - tol)
            & (pts[..., 0] <= self.hi[0] + tol)
            & (pts[..., 1] >= self.lo[1] - tol)
            & (pts[..., 1] <= self.hi[1] + tol)
        )

    def union(self, other: Aabb2) -> Aabb2:
        return Aabb2(
            (min(self.lo[0], other.lo[0]), min(self.lo[1], other.lo[1])),
            (max(self.hi[0], other.hi[0]), max(self.hi[1], other.hi[1])),
        )

    def intersection(self, other: Aabb2) -> Aabb2:
        lo = (max(self.lo[0], other.lo[0]), max(self.lo[1], other.lo[1]))
        hi = (min(self.hi[0], other.hi[0]), min(self.hi[1], other.hi[1]))
        # an empty intersection collapses to a point so min <= max still holds
        hi = (max(hi[0], lo[0]), max(hi[1], lo[1]))
        return Aabb2(lo, hi)

    def inflate(self, d: float) -> Aabb2:
        return Aabb2((self.lo[0] - d, self.lo[1] - d), (self.hi[0] + d, self.hi[1] + d))

    def transformed(self, t: RigidTransform2) -> Aabb2:
        c = t.apply(self.corners())
        return Aabb2(
            (float(c[:, 0].min()), float(c[:, 1].min())),
            (float(c[:, 0].max()), float(c[:, 1].max())),
        )


class Sdf2:
    """Base class of every shape node."""

    def _eval(self, p: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def bbox(self) -> Aabb2:  # pragma: no cover - abstract
        raise NotImplementedError

    def __call__(self, p):
        return evaluate(self, p)

    def __or__(self, other: Sdf2) -> Sdf2:
        return union(self, other)

    def __and__(self, other: Sdf2) -> Sdf2:
        return intersection(self, other)

    def __sub__(self, other: Sdf2) -> Sdf2:
        return difference(self, other)


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a finite number > 0, got {value!r}")
    return value


def _box_distance(p: np.ndarray, hx: float, hy: float) -> np.ndarray:
    dx = np.abs(p[..., 0]) - hx
    dy = np.abs(p[..., 1]) - hy
    outside = np.hypot(np.maximum(dx, 0.0), np.maximum(dy, 0.0))
    return outside + np.minimum(np.maximum(dx, dy), 0.0)


@dataclass(frozen=True)
class Circle(Sdf2):
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "radius", _positive("radius", self.radius))

    def _eval(self, p):
        return np.hypot(p[..., 0], p[..., 1]) - self.radius

    def bbox(self):
        r = self.radius
        return Aabb2((-r, -r), (r, r))


@dataclass(frozen=True)
class Rectangle(Sdf2):
    """Axis-aligned rectangle centred on the origin."""

    width: float
    height: float

    def __post_init__(self):
        object.__setattr__(self, "width", _positive("width", self.width))
        object.__setattr__(self, "height", _positive("height", self.height))

    def _eval(self, p):
        return _box_distance(p, self.width / 2, self.height / 2)

    def bbox(self):
        hx, hy = self.width / 2, self.height / 2
        return Aabb2((-hx, -hy), (hx, hy))


@dataclass(frozen=True)
class Balk(Sdf2):
    """Capsule along x: a segment of ``length`` swept by a disk of diameter ``width``."""

    length: float
    width: float

    def __post_init__(self):
        object.__setattr__(self, "length", _positive("length", self.length))
        object.__setattr__(self, "width", _positive("width", self.width))

    def _eval(self, p):
        half = self.length / 2
        qx = np.abs(p[..., 0]) - np.minimum(np.abs(p[..., 0]), half)
        return np.hypot(qx, p[..., 1]) - self.width / 2

    def bbox(self):
        hx = self.length / 2 + self.width / 2
        hy = self.width / 2
        return Aabb2((-hx, -hy), (hx, hy))


@dataclass(frozen=True)
class Ring(Sdf2):
    outer_radius: float
    inner_radius: float

    def __post_init__(self):
        ro = _positive("outer_radius", self.outer_radius)
        ri = _positive("inner_radius", self.inner_radius)
        if ri >= ro:
            raise ValueError(f"inner_radius ({ri}) must be < outer_radius ({ro})")
        object.__setattr__(self, "outer_radius", ro)
        object.__setattr__(self, "inner_radius", ri)

    def _eval(self, p):
        mid = (self.outer_radius + self.inner_radius) / 2
        half = (self.outer_radius - self.inner_radius) / 2
        return np.abs(np.hypot(p[..., 0], p[..., 1]) - mid) - half

    def bbox(self):
        r = self.outer_radius
        return Aabb2((-r, -r), (r, r))


def _convex_polygon_distance(p: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Exact signed distance to a convex CCW polygon."""
    n = len(verts)
    dist2 = np.full(p.shape[:-1], np.inf)
    inside = np.ones(p.shape[:-1], dtype=bool)
    for i in range(n):
        a, b = verts[i], verts[(i + 1) % n]
        e = b - a
        w = p - a
        t = np.clip((w[..., 0] * e[0] + w[..., 1] * e[1]) / (e @ e), 0.0, 1.0)
        dx = w[..., 0] - e[0] * t
        dy = w[..., 1] - e[1] * t
        dist2 = np.minimum(dist2, dx * dx + dy * dy)
        inside &= (e[0] * w[..., 1] - e[1] * w[..., 0]) > 0
    d = np.sqrt(dist2)
    return np.where(inside, -d, d)


@dataclass(frozen=True)
class Gear(Sdf2):
    """Spur-gear outline: pitch disk plus ``teeth`` trapezoidal teeth.

    Each tooth sits on the chord spanning ``tooth_width_ratio`` of its angular
    pitch and rises ``tooth_depth`` beyond the pitch circle; its tip is half as
    wide as its root.
    """

    pitch_radius: float
    teeth: int
    tooth_depth: float
    tooth_width_ratio: float

    def __post_init__(self):
        object.__setattr__(self, "pitch_radius", _positive("pitch_radius", self.pitch_radius))
        object.__setattr__(self, "tooth_depth", _positive("tooth_depth", self.tooth_depth))
        if isinstance(self.teeth, bool) or int(self.teeth) != self.teeth or self.teeth < 4:
            raise ValueError(f"teeth must be an integer >= 4, got {self.teeth!r}")
        object.__setattr__(self, "teeth", int(self.teeth))
        ratio = float(self.tooth_width_ratio)
        if not (0.0 < ratio < 1.0):
            raise ValueError(f"tooth_width_ratio must lie in (0, 1), got {ratio!r}")
        object.__setattr__(self, "tooth_width_ratio", ratio)

    @property
    def tooth_profile(self) -> np.ndarray:
        """CCW trapezoid of the tooth centred on the +x axis."""
        r = self.pitch_radius
        half_angle = self.tooth_width_ratio * math.pi / self.teeth
        root_x, root_h = r * math.cos(half_angle), r * math.sin(half_angle)
        tip_x, tip_h = r + self.tooth_depth, 0.5 * root_h
        return np.array([[root_x, -root_h], [tip_x, -tip_h], [tip_x, tip_h], [root_x, root_h]])

    def _eval(self, p):
        sector = 2 * math.pi / self.teeth
        angle = np.arctan2(p[..., 1], p[..., 0])
        local = angle - np.round(angle / sector) * sector
        rad = np.hypot(p[..., 0], p[..., 1])
        q = np.stack([rad * np.cos(local), rad * np.sin(local)], axis=-1)
        return np.minimum(rad - self.pitch_radius, _convex_polygon_distance(q, self.tooth_profile))

    def bbox(self):
        r = self.pitch_radius + self.tooth_depth
        return Aabb2((-r, -r), (r, r))


_BOOLEAN_OPS = ("union", "intersection", "difference")


@dataclass(frozen=True)
class Boolean(Sdf2):
    """n-ary min/max boolean. ``difference`` subtracts every later child from the first."""

    op: str
    children: tuple[Sdf2, ...]

    def __post_init__(self):
        if self.op not in _BOOLEAN_OPS:
            raise ValueError(f"unknown boolean op {self.op!r}")
        children = tuple(self.children)
        if not children:
            raise ValueError(f"{self.op} needs at least one argument")
        if self.op == "difference" and len(children) < 2:
            raise ValueError("difference needs at least two arguments")
        for c in children:
            if not isinstance(c, Sdf2):
                raise TypeError(f"boolean child must be an Sdf2, got {type(c).__name__}")
        object.__setattr__(self, "children", children)

    def _eval(self, p):
        values = [c._eval(p) for c in self.children]
        if self.op == "union":
            out = values[0]
            for v in values[1:]:
                out = np.minimum(out, v)
        elif self.op == "intersection":
            out = values[0]
            for v in values[1:]:
                out = np.maximum(out, v)
        else:
            out = values[0]
            for v in values[1:]:
                out = np.maximum(out, -v)
        return out

    def bbox(self):
        boxes = [c.bbox() for c in self.children]
        if self.op == "union":
            out = boxes[0]
            for b in boxes[1:]:
                out = out.union(b)
            return out
        if self.op == "intersection":
            out = boxes[0]
            for b in boxes[1:]:
                out = out.intersection(b)
            return out
        return boxes[0]


@dataclass(frozen=True)
class Transformed(Sdf2):
    transform: RigidTransform2
    child: Sdf2

    def _eval(self, p):
        return self.child._eval(self.transform.inverse().apply(p))

    def bbox(self):
        return self.child.bbox().transformed(self.transform)


@dataclass(frozen=True)
class Offset(Sdf2):
    """Dilate (``distance > 0``) or erode (``distance < 0``) the child."""

    distance: float
    child: Sdf2

    def __post_init__(self):
        d = float(self.distance)
        if not math.isfinite(d):
            raise ValueError(f"offset distance must be finite, got {d!r}")
        object.__setattr__(self, "distance", d)

    def _eval(self, p):
        return self.child._eval(p) - self.distance

    def bbox(self):
        # erosion keeps the child's box: CSG distances are bounds, so shrinking is unsafe
        return self.child.bbox().inflate(max(self.distance, 0.0))


def evaluate(sdf: Sdf2, point):
    """Signed distance at ``point`` (a pair) or at each row of an ``(..., 2)`` array."""
    pts = _as_points(point)
    if pts.ndim == 1:
        return float(sdf._eval(pts[None, :])[0])
    return sdf._eval(pts)


def union(*shapes: Sdf2) -> Sdf2:
    return Boolean("union", shapes)


def intersection(*shapes: Sdf2) -> Sdf2:
    return Boolean("intersection", shapes)


def difference(a: Sdf2, *others: Sdf2) -> Sdf2:
    return Boolean("difference", (a, *others))


def transform(t: RigidTransform2, s: Sdf2) -> Sdf2:
    return Transformed(t, s)


def offset(d: float, s: Sdf2) -> Sdf2:
    return Offset(d, s)


def bounding_box(s: Sdf2) -> Aabb2:
    return s.bbox()


def iter_nodes(s: Sdf2) -> Iterable[Sdf2]:
    """Depth-first walk over every node of the tree."""
    yield s
    if isinstance(s, Boolean):
        for c in s.children:
            yield from iter_nodes(c)
    elif isinstance(s, (Transformed, Offset)):
        yield from iter_nodes(s.child)


def sample_grid(s: Sdf2, box: Aabb2, nx: int, ny: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Evaluate on an ``(nx+1) x (ny+1)`` vertex grid spanning ``box``.

    Returns ``(xs, ys, values)`` with ``values[i, j]`` at ``(xs[i], ys[j])``.
    """
    xs = np.linspace(box.lo[0], box.hi[0], nx + 1)
    ys = np.linspace(box.lo[1], box.hi[1], ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    values = s._eval(np.stack([gx, gy], axis=-1))
    return xs, ys, values


def points_inside(s: Sdf2, points: Sequence) -> np.ndarray:
    return evaluate(s, np.asarray(points, dtype=np.float64).reshape(-1, 2)) < 0

"""Mechanism spec → compiled assembly.

Compilation cuts a clearance hole for every pin connection, solves each moving
part's assembled pose, synthesizes a base plate carrying the pins, adds a
grasp pin to every component and lays all components out on the print bed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import sdf
from .emitters.manifest import AssemblyManifest, Feature, ManifestComponent
from .mechspec import BASE_ID, CellParams, MechanismSpec, SpecValidationError, final_pose_for, validate_spec

log = logging.getLogger(__name__)

DEFAULT_CLEARANCE = 0.3
DEFAULT_MARGIN = 5.0
DEFAULT_GRASP_RADIUS = 3.0
DEFAULT_PIN_CAP = 1.0
HOLE_WALL = 0.5
COLLISION_PITCH = 0.5


class CompileError(RuntimeError):
    pass


class LayoutOverflow(CompileError):
    pass


class PoseCollision(CompileError):
    pass


class DegenerateHole(CompileError):
    pass


class GraspPinUnplaceable(CompileError):
    pass


@dataclass
class CompiledPart:
    id: str
    shape: sdf.Sdf2
    thickness: float
    final_pose: sdf.RigidTransform2
    initial_pose: sdf.RigidTransform2 = field(default_factory=sdf.RigidTransform2)
    features: list[Feature] = field(default_factory=list)
    footprint: sdf.Sdf2 | None = None  # shape before holes and pins

    def bbox(self) -> sdf.Aabb2:
        return sdf.bounding_box(self.shape)

    def features_of(self, kind: str) -> list[tuple[int, Feature]]:
        return [(i, f) for i, f in enumerate(self.features) if f.kind == kind]


@dataclass
class CompiledAssembly:
    base: CompiledPart
    parts: list[CompiledPart]
    clearance: float
    bed: tuple[float, float]
    pin_height: float
    margin: float = DEFAULT_MARGIN

    @property
    def components(self) -> list[CompiledPart]:
        """Base first, then moving parts in precedence order."""
        return [self.base, *self.parts]

    def component(self, cid: str) -> CompiledPart:
        for c in self.components:
            if c.id == cid:
                return c
        raise KeyError(cid)


def _hole_breaches(shape: sdf.Sdf2, center, radius: float, samples: int = 128) -> bool:
    t = 2 * math.pi * np.arange(samples) / samples
    ring = np.column_stack([center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)])
    return bool((sdf.evaluate(shape, ring) > -HOLE_WALL).any())


def _precedence_order(spec: MechanismSpec) -> list[str]:
    order: list[str] = []
    for c in spec.connections:
        if c.moving_part not in order:
            order.append(c.moving_part)
    order.extend(p.id for p in spec.parts if p.id not in order)
    return order


def generate_base(spec: MechanismSpec, parts: list[CompiledPart], margin: float, pin_height: float) -> CompiledPart:
    """Plate covering every part's assembled footprint by ``margin``, plus one pin per connection."""
    footprints = [sdf.transform(p.final_pose, p.footprint or p.shape) for p in parts]
    outline = sdf.offset(margin, sdf.union(*footprints))
    by_id = {p.id: p for p in parts}
    pins = []
    for k, conn in enumerate(spec.connections):
        part = by_id[conn.moving_part]
        hole_index = next(
            i for i, f in part.features_of("hole") if f.mate == (BASE_ID, k)
        )
        pins.append(Feature("pin", tuple(map(float, conn.anchor_global)), conn.pin_radius, pin_height, (part.id, hole_index)))
    return CompiledPart(BASE_ID, outline, spec.part_thickness, sdf.RigidTransform2.identity(), features=pins, footprint=outline)


def _grid_points(box: sdf.Aabb2, pitch: float) -> np.ndarray:
    # lattice anchored at multiples of pitch so sampling does not depend on box jitter
    x0, y0 = math.floor(box.lo[0] / pitch) * pitch, math.floor(box.lo[1] / pitch) * pitch
    xs = x0 + pitch * np.arange(int(math.ceil((box.hi[0] - x0) / pitch)) + 1)
    ys = y0 + pitch * np.arange(int(math.ceil((box.hi[1] - y0) / pitch)) + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def place_grasp_pin(part: CompiledPart, hint, radius: float, height: float, pitch: float = 0.5) -> Feature:
    """Grasp pin at ``hint`` (or the area centroid) if it fits, else at the most clear interior point."""
    others = [f for f in part.features if f.kind in ("pin", "grasp_pin")]

    def clearance(points: np.ndarray) -> np.ndarray:
        score = -sdf.evaluate(part.shape, points) - radius
        for f in others:
            d = np.hypot(points[:, 0] - f.local_center[0], points[:, 1] - f.local_center[1])
            score = np.minimum(score, d - f.radius - radius)
        return score

    box = part.bbox()
    pts = _grid_points(box, pitch)
    if hint is None:
        inside = pts[sdf.evaluate(part.shape, pts) < 0]
        candidate = inside.mean(axis=0) if len(inside) else None
    else:
        candidate = np.asarray(hint, dtype=np.float64)
    if candidate is not None and clearance(candidate[None, :])[0] >= HOLE_WALL:
        return Feature("grasp_pin", (float(candidate[0]), float(candidate[1])), radius, height)
    scores = clearance(pts)
    best = int(np.argmax(scores))
    if scores[best] < HOLE_WALL:
        raise GraspPinUnplaceable(f"part {part.id!r} has no room for a {radius} mm grasp pin")
    if hint is not None:
        log.warning("grasp pin hint for %s does not fit; using %s", part.id, pts[best])
    return Feature("grasp_pin", (float(pts[best, 0]), float(pts[best, 1])), radius, height)


def check_collisions(parts: list[CompiledPart], pitch: float = COLLISION_PITCH) -> None:
    """Raise :class:`PoseCollision` if two parts share interior at their final poses.

    Points inside either part's hole circles (the clearance annuli) are exempt.
    """
    placed = [(p, sdf.transform(p.final_pose, p.shape), p.bbox().transformed(p.final_pose)) for p in parts]
    for i in range(len(placed)):
        for j in range(i + 1, len(placed)):
            (pa, sa, ba), (pb, sb, bb) = placed[i], placed[j]
            if ba.lo[0] > bb.hi[0] or bb.lo[0] > ba.hi[0] or ba.lo[1] > bb.hi[1] or bb.lo[1] > ba.hi[1]:
                continue
            pts = _grid_points(ba.intersection(bb), pitch)
            both = (sdf.evaluate(sa, pts) < 0) & (sdf.evaluate(sb, pts) < 0)
            if not both.any():
                continue
            hits = pts[both]
            exempt = np.zeros(len(hits), dtype=bool)
            for p in (pa, pb):
                for _, f in p.features_of("hole"):
                    g = p.final_pose.apply(f.local_center)
                    exempt |= np.hypot(hits[:, 0] - g[0], hits[:, 1] - g[1]) <= f.radius
            if not exempt.all():
                x, y = hits[~exempt][0]
                raise PoseCollision(f"{pa.id!r} and {pb.id!r} overlap near ({x:.2f}, {y:.2f}) in the assembled pose")


def layout_print_bed(parts: list[CompiledPart], cell: CellParams) -> dict[str, sdf.RigidTransform2]:
    """Shelf packing: largest bbox first (ties by id), rows left to right, ``part_spacing`` gaps and border."""
    gap = cell.part_spacing
    order = sorted(parts, key=lambda p: (-p.bbox().area, p.id))
    poses: dict[str, sdf.RigidTransform2] = {}
    x, y, row_h = gap, gap, 0.0
    for p in order:
        box = p.bbox()
        w, h = box.width, box.height
        if x + w > cell.bed_width - gap and x > gap:
            x, y, row_h = gap, y + row_h + gap, 0.0
        if x + w > cell.bed_width - gap or y + h > cell.bed_depth - gap:
            raise LayoutOverflow(
                f"part {p.id!r} ({w:.1f} x {h:.1f} mm) does not fit on the {cell.bed_width} x {cell.bed_depth} mm bed"
            )
        poses[p.id] = sdf.RigidTransform2.translation(x - box.lo[0], y - box.lo[1])
        x += w + gap
        row_h = max(row_h, h)
    return poses


def compile_assembly(
    spec: MechanismSpec,
    cell: CellParams | None = None,
    clearance: float = DEFAULT_CLEARANCE,
    *,
    margin: float = DEFAULT_MARGIN,
    grasp_radius: float = DEFAULT_GRASP_RADIUS,
    pin_cap: float = DEFAULT_PIN_CAP,
    collisions: bool = True,
) -> CompiledAssembly:
    cell = cell or CellParams()
    if not clearance >= 0:
        raise ValueError("clearance must be >= 0")
    violations = validate_spec(spec)
    if violations:
        raise SpecValidationError(violations)
    pin_height = spec.part_thickness + pin_cap

    compiled: dict[str, CompiledPart] = {}
    for part in spec.parts:
        compiled[part.id] = CompiledPart(
            part.id, part.shape, spec.part_thickness, sdf.RigidTransform2.identity(), footprint=part.shape
        )
    for k, conn in enumerate(spec.connections):
        part = compiled[conn.moving_part]
        hole_r = conn.pin_radius + clearance
        if _hole_breaches(part.footprint, conn.anchor_local, hole_r):
            raise DegenerateHole(
                f"hole of radius {hole_r} mm at {conn.anchor_local} leaves less than {HOLE_WALL} mm of wall in {part.id!r}"
            )
        hole = sdf.transform(sdf.RigidTransform2.translation(*conn.anchor_local), sdf.Circle(hole_r))
        part.shape = sdf.difference(part.shape, hole)
        part.features.append(Feature("hole", tuple(map(float, conn.anchor_local)), hole_r, spec.part_thickness, (BASE_ID, k)))
        if len(part.features_of("hole")) == 1:
            part.final_pose = final_pose_for(conn)

    order = _precedence_order(spec)
    parts = [compiled[pid] for pid in order]
    if collisions:
        check_collisions(parts)
    base = generate_base(spec, parts, margin, pin_height)

    for p in [base, *parts]:
        hint = spec.part(p.id).grasp_pin if p.id != BASE_ID else None
        g = place_grasp_pin(p, hint, grasp_radius, pin_height)
        p.features.append(g)
        p.shape = sdf.union(p.shape, sdf.transform(sdf.RigidTransform2.translation(*g.local_center), sdf.Circle(grasp_radius)))

    poses = layout_print_bed([base, *parts], cell)
    for p in [base, *parts]:
        p.initial_pose = poses[p.id]
    return CompiledAssembly(base, parts, clearance, (cell.bed_width, cell.bed_depth), pin_height, margin)


def build_manifest(assembly: CompiledAssembly) -> AssemblyManifest:
    comps = []
    for rank, p in enumerate(assembly.components):
        comps.append(ManifestComponent(p.id, p.initial_pose, p.final_pose, p.thickness, rank, tuple(p.features)))
    return AssemblyManifest(tuple(comps))


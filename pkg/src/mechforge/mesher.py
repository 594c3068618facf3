"""Planar SDF → closed triangle mesh.

Contours come from marching squares over a regular sample grid; caps are
triangulated by ear clipping after bridging holes into their outer loop; side
walls are quads split in two. Parts are prisms, so the mesh is exact in z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import sdf

DEFAULT_RESOLUTION = 256
BOSS_SEGMENTS = 32
COLLINEAR_TOL = 1e-6


class MeshError(RuntimeError):
    pass


class EmptyShape(MeshError):
    pass


class TriangulationFailure(MeshError):
    pass


def signed_area(loop: np.ndarray) -> float:
    x, y = loop[:, 0], loop[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _inside_loop(points: np.ndarray, loop: np.ndarray) -> np.ndarray:
    x, y = points[:, 0:1], points[:, 1:2]
    x0, y0 = loop[None, :, 0], loop[None, :, 1]
    x1, y1 = np.roll(loop[:, 0], -1)[None, :], np.roll(loop[:, 1], -1)[None, :]
    straddle = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    return (np.count_nonzero(straddle & (x < xi), axis=1) % 2) == 1


@dataclass
class PolygonSet:
    """Closed loops; outer loops CCW, holes CW. ``parents[i]`` is the loop directly enclosing loop ``i``."""

    contours: list[np.ndarray]
    parents: list[int | None] = field(default_factory=list)

    def __post_init__(self):
        if not self.parents:
            self.parents = _nesting(self.contours)

    @property
    def area(self) -> float:
        return sum(signed_area(c) for c in self.contours)

    def outer_indices(self) -> list[int]:
        return [i for i, c in enumerate(self.contours) if signed_area(c) > 0]

    def holes_of(self, i: int) -> list[int]:
        return [j for j, p in enumerate(self.parents) if p == i and signed_area(self.contours[j]) < 0]

    def transformed(self, pose: sdf.RigidTransform2) -> PolygonSet:
        # rigid motions preserve orientation and nesting
        return PolygonSet([pose.apply(c) for c in self.contours], list(self.parents))

    def bounds(self) -> sdf.Aabb2:
        pts = np.concatenate(self.contours)
        return sdf.Aabb2(tuple(pts.min(axis=0)), tuple(pts.max(axis=0)))


def _nesting(contours: list[np.ndarray]) -> list[int | None]:
    areas = [abs(signed_area(c)) for c in contours]
    parents: list[int | None] = []
    for i, c in enumerate(contours):
        best, best_area = None, math.inf
        for j, other in enumerate(contours):
            if j == i or areas[j] <= areas[i]:
                continue
            if _inside_loop(c[:1], other)[0] and areas[j] < best_area:
                best, best_area = j, areas[j]
        parents.append(best)
    return parents


# ---------------------------------------------------------------------------
# marching squares


def _clean_loop(loop: np.ndarray, tol: float = COLLINEAR_TOL) -> np.ndarray:
    """Drop repeated points and vertices within ``tol`` of the line through their neighbours."""
    pts = [p for p in loop]
    changed = True
    while changed and len(pts) >= 3:
        changed = False
        out = []
        n = len(pts)
        for k in range(n):
            prev = out[-1] if out else pts[k - 1]
            cur, nxt = pts[k], pts[(k + 1) % n]
            d = nxt - prev
            length = math.hypot(d[0], d[1])
            if length == 0.0:
                dist = math.hypot(cur[0] - prev[0], cur[1] - prev[1])
            else:
                dist = abs(d[0] * (cur[1] - prev[1]) - d[1] * (cur[0] - prev[0])) / length
            if dist <= tol:
                changed = True
                continue
            out.append(cur)
        pts = out
    return np.array(pts) if len(pts) >= 3 else np.empty((0, 2))


def extract_contours(shape: sdf.Sdf2, bbox: sdf.Aabb2 | None = None, resolution: int = DEFAULT_RESOLUTION) -> PolygonSet:
    """Zero-level loops of ``shape``.

    ``resolution`` cells span the larger side of ``bbox`` (default: the
    shape's bounding box); the grid is padded by two cells on every side.
    """
    if resolution < 16:
        raise ValueError("resolution must be >= 16")
    box = sdf.bounding_box(shape) if bbox is None else bbox
    extent = max(box.width, box.height)
    if not extent > 0 or not math.isfinite(extent):
        raise EmptyShape("shape has an empty bounding box")
    cell = extent / resolution
    nx = int(math.ceil(box.width / cell - 1e-9)) + 4
    ny = int(math.ceil(box.height / cell - 1e-9)) + 4
    lo = (box.lo[0] - 2 * cell, box.lo[1] - 2 * cell)
    xs = lo[0] + cell * np.arange(nx + 1)
    ys = lo[1] + cell * np.arange(ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    values = sdf.evaluate(shape, np.stack([gx, gy], axis=-1))
    inside = values < 0
    if not inside.any():
        raise EmptyShape("no interior samples; the shape is empty at this resolution")

    code = (
        inside[:-1, :-1].astype(np.uint8)
        | (inside[1:, :-1].astype(np.uint8) << 1)
        | (inside[1:, 1:].astype(np.uint8) << 2)
        | (inside[:-1, 1:].astype(np.uint8) << 3)
    )
    cells = np.argwhere((code != 0) & (code != 15))

    saddles = [(i, j) for i, j in cells if code[i, j] in (5, 10)]
    center_inside = {}
    if saddles:
        centers = np.array([[xs[i] + cell / 2, ys[j] + cell / 2] for i, j in saddles])
        for key, v in zip(saddles, sdf.evaluate(shape, centers)):
            center_inside[key] = v < 0

    def crossing(key):
        kind, i, j = key
        if kind == "h":
            a, b = values[i, j], values[i + 1, j]
            t = a / (a - b)
            return (xs[i] + t * (xs[i + 1] - xs[i]), ys[j])
        a, b = values[i, j], values[i, j + 1]
        t = a / (a - b)
        return (xs[i], ys[j] + t * (ys[j + 1] - ys[j]))

    successor: dict[tuple, tuple] = {}
    for i, j in cells:
        i, j = int(i), int(j)
        c = code[i, j]
        corner_in = [bool(c & 1), bool(c & 2), bool(c & 4), bool(c & 8)]
        edges = [("h", i, j), ("v", i + 1, j), ("h", i, j + 1), ("v", i, j)]
        exits = [k for k in range(4) if corner_in[k] and not corner_in[(k + 1) % 4]]
        entries = {k for k in range(4) if not corner_in[k] and corner_in[(k + 1) % 4]}
        if len(exits) == 1:
            successor[edges[exits[0]]] = edges[next(iter(entries))]
        else:
            step = 1 if center_inside[(i, j)] else -1
            for k in exits:
                successor[edges[k]] = edges[(k + step) % 4]

    loops = []
    while successor:
        start, nxt = successor.popitem()
        keys = [start]
        while nxt != start:
            keys.append(nxt)
            nxt = successor.pop(nxt)
        loop = _clean_loop(np.array([crossing(k) for k in keys]))
        if len(loop) >= 3 and abs(signed_area(loop)) > 0:
            loops.append(loop)
    if not loops:
        raise EmptyShape("no closed contour survived cleanup")
    # deterministic order: by lowest vertex, then by x
    loops.sort(key=lambda l: (float(l[:, 1].min()), float(l[:, 0].min())))
    return PolygonSet(loops)


# ---------------------------------------------------------------------------
# triangulation


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _locally_inside(coords, ring, k, target) -> bool:
    """Whether the diagonal from ring[k] towards ``target`` starts inside the polygon."""
    n = len(ring)
    prev, cur, nxt = coords[ring[(k - 1) % n]], coords[ring[k]], coords[ring[(k + 1) % n]]
    if _cross(prev, cur, nxt) >= 0:  # convex corner
        return _cross(cur, nxt, target) >= 0 and _cross(cur, target, prev) >= 0
    return not (_cross(cur, target, nxt) > 0 and _cross(cur, prev, target) > 0)


def _bridge_hole(coords: np.ndarray, ring: list[int], hole: list[int]) -> list[int]:
    m_local = max(range(len(hole)), key=lambda k: (coords[hole[k]][0], -coords[hole[k]][1]))
    M = coords[hole[m_local]]
    mx, my = M
    best_x, best_k = math.inf, None
    n = len(ring)
    for k in range(n):
        a, b = coords[ring[k]], coords[ring[(k + 1) % n]]
        # edges crossing the ray upwards (right-hand side of a CCW boundary)
        if a[1] <= my <= b[1] and a[1] != b[1]:
            x = a[0] + (my - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            if mx <= x < best_x:
                best_x, best_k = x, k
    if best_k is None:
        raise TriangulationFailure("hole is not enclosed by its outer loop")
    a_k, b_k = best_k, (best_k + 1) % n
    if coords[ring[a_k]][1] == my and coords[ring[a_k]][0] == best_x:
        p_k = a_k
    elif coords[ring[b_k]][1] == my and coords[ring[b_k]][0] == best_x:
        p_k = b_k
    else:
        p_k = a_k if coords[ring[a_k]][0] > coords[ring[b_k]][0] else b_k
    I = (best_x, my)
    P = coords[ring[p_k]]
    if not (P[0] == I[0] and P[1] == I[1]):
        # any vertex inside triangle (M, I, P) blocks the view; take the one closest in angle to the ray
        tri = (M, I, P) if _cross(M, I, P) > 0 else (M, P, I)
        best = None
        for k in range(n):
            q = coords[ring[k]]
            if k == p_k or (q[0] == P[0] and q[1] == P[1]):
                continue
            if _cross(tri[0], tri[1], q) >= 0 and _cross(tri[1], tri[2], q) >= 0 and _cross(tri[2], tri[0], q) >= 0:
                if q[0] == mx and q[1] == my:
                    continue
                ang = abs(math.atan2(q[1] - my, q[0] - mx))
                dist = math.hypot(q[0] - mx, q[1] - my)
                cand = (ang, dist, k)
                if _locally_inside(coords, ring, k, M) and (best is None or cand < best):
                    best = cand
        if best is not None:
            p_k = best[2]
    # among coincident copies of P (earlier bridges) pick the one whose wedge admits the bridge
    P = coords[ring[p_k]]
    for k in range(n):
        q = coords[ring[k]]
        if q[0] == P[0] and q[1] == P[1] and _locally_inside(coords, ring, k, M):
            p_k = k
            break
    rotated = hole[m_local:] + hole[:m_local]
    return ring[: p_k + 1] + rotated + [hole[m_local], ring[p_k]] + ring[p_k + 1 :]


def _ear_clip(coords: np.ndarray, ring: list[int]) -> list[tuple[int, int, int]]:
    idx = list(ring)
    tris: list[tuple[int, int, int]] = []
    i = 0
    stall = 0
    while len(idx) > 3:
        n = len(idx)
        i %= n
        a, b, c = idx[i - 1], idx[i], idx[(i + 1) % n]
        pa, pb, pc = coords[a], coords[b], coords[c]
        area = _cross(pa, pb, pc)
        ear = area > 0
        if ear:
            pts = coords[idx]
            # exclude vertices that coincide with a triangle corner (bridge duplicates)
            same = (
                np.all(pts == pa, axis=1) | np.all(pts == pb, axis=1) | np.all(pts == pc, axis=1)
            )
            d1 = (pb[0] - pa[0]) * (pts[:, 1] - pa[1]) - (pb[1] - pa[1]) * (pts[:, 0] - pa[0])
            d2 = (pc[0] - pb[0]) * (pts[:, 1] - pb[1]) - (pc[1] - pb[1]) * (pts[:, 0] - pb[0])
            d3 = (pa[0] - pc[0]) * (pts[:, 1] - pc[1]) - (pa[1] - pc[1]) * (pts[:, 0] - pc[0])
            blocked = (d1 >= 0) & (d2 >= 0) & (d3 >= 0) & ~same
            ear = not blocked.any()
        if not ear and stall > n and area == 0:
            # last resort for exactly collinear runs: a zero-area triangle keeps the surface closed
            ear = True
        if ear:
            tris.append((a, b, c))
            del idx[i]
            i = max(i - 1, 0)
            stall = 0
            continue
        i += 1
        stall += 1
        if stall > 2 * n + 2:
            raise TriangulationFailure(f"no ear found with {n} vertices left")
    tris.append((idx[0], idx[1], idx[2]))
    return tris


def triangulate(outer: np.ndarray, holes: Sequence[np.ndarray] = ()) -> tuple[np.ndarray, np.ndarray]:
    """Triangulate a CCW outer loop with CW holes.

    Returns ``(coords, triangles)`` where ``coords`` stacks the outer loop and
    then each hole, and every triangle is CCW.
    """
    coords = np.concatenate([outer, *holes]) if holes else np.asarray(outer, dtype=np.float64)
    ring = list(range(len(outer)))
    offsets = np.cumsum([len(outer)] + [len(h) for h in holes])
    hole_rings = [list(range(offsets[k], offsets[k] + len(h))) for k, h in enumerate(holes)]
    order = sorted(range(len(hole_rings)), key=lambda k: -float(coords[hole_rings[k]][:, 0].max()))
    for k in order:
        ring = _bridge_hole(coords, ring, hole_rings[k])
    return coords, np.array(_ear_clip(coords, ring), dtype=np.int64)


# ---------------------------------------------------------------------------
# meshes


@dataclass
class TriMesh:
    vertices: np.ndarray  # (n, 3) mm
    triangles: np.ndarray  # (m, 3) vertex indices, CCW seen from outside

    @property
    def normals(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        length = np.linalg.norm(n, axis=1, keepdims=True)
        return np.divide(n, length, out=np.zeros_like(n), where=length > 0)

    def volume(self) -> float:
        v = self.vertices[self.triangles]
        return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)

    def edge_counts(self) -> dict[tuple[int, int], int]:
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]])
        e.sort(axis=1)
        keys, counts = np.unique(e, axis=0, return_counts=True)
        return {(int(a), int(b)): int(c) for (a, b), c in zip(keys, counts)}

    def boundary_edges(self) -> int:
        return sum(1 for c in self.edge_counts().values() if c != 2)

    def is_watertight(self) -> bool:
        return len(self.triangles) > 0 and self.boundary_edges() == 0

    def transformed(self, pose: sdf.RigidTransform2, dz: float = 0.0) -> TriMesh:
        xy = pose.apply(self.vertices[:, :2])
        z = self.vertices[:, 2] + dz if dz else self.vertices[:, 2]
        return TriMesh(np.column_stack([xy, z]), self.triangles.copy())

    @staticmethod
    def concatenate(meshes: Iterable[TriMesh]) -> TriMesh:
        verts, tris, offset = [], [], 0
        for m in meshes:
            verts.append(m.vertices)
            tris.append(m.triangles + offset)
            offset += len(m.vertices)
        if not verts:
            return TriMesh(np.empty((0, 3)), np.empty((0, 3), dtype=np.int64))
        return TriMesh(np.concatenate(verts), np.concatenate(tris))


@dataclass(frozen=True)
class Boss:
    """Cylindrical pin standing on the top cap."""

    center: tuple[float, float]
    radius: float
    height: float

    def polygon(self, segments: int = BOSS_SEGMENTS) -> np.ndarray:
        t = 2 * math.pi * np.arange(segments) / segments
        return np.column_stack([self.center[0] + self.radius * np.cos(t), self.center[1] + self.radius * np.sin(t)])


def _segment_distance(p, loop: np.ndarray) -> float:
    a = loop
    b = np.roll(loop, -1, axis=0)
    e = b - a
    w = np.asarray(p) - a
    t = np.clip(np.einsum("ij,ij->i", w, e) / np.einsum("ij,ij->i", e, e), 0, 1)
    d = w - e * t[:, None]
    return float(np.sqrt(np.einsum("ij,ij->i", d, d)).min())


def _owner_of_boss(polys: PolygonSet, boss: Boss) -> int:
    for i in polys.outer_indices():
        c = np.array([boss.center])
        if not _inside_loop(c, polys.contours[i])[0]:
            continue
        if any(_inside_loop(c, polys.contours[h])[0] for h in polys.holes_of(i)):
            continue
        loops = [polys.contours[i]] + [polys.contours[h] for h in polys.holes_of(i)]
        if min(_segment_distance(boss.center, l) for l in loops) <= boss.radius:
            raise TriangulationFailure(f"boss at {boss.center} crosses a contour")
        return i
    raise TriangulationFailure(f"boss at {boss.center} does not stand on material")


def extrude(polys: PolygonSet, thickness: float, z0: float = 0.0, bosses: Sequence[Boss] = ()) -> TriMesh:
    """Prism of ``polys`` between ``z0`` and ``z0 + thickness`` with optional pins on top."""
    if not thickness > 0:
        raise ValueError("thickness must be > 0")
    z1 = z0 + thickness
    verts: list[np.ndarray] = []
    tris: list[np.ndarray] = []
    count = 0

    def add_vertices(xy: np.ndarray, z: float) -> int:
        nonlocal count
        start = count
        verts.append(np.column_stack([xy, np.full(len(xy), z)]))
        count += len(xy)
        return start

    def add_walls(bottom: int, top: int, n: int):
        k = np.arange(n)
        a0, b0 = bottom + k, bottom + (k + 1) % n
        a1, b1 = top + k, top + (k + 1) % n
        tris.append(np.column_stack([a0, b0, b1]))
        tris.append(np.column_stack([a0, b1, a1]))

    boss_owner: dict[int, list[Boss]] = {}
    for b in bosses:
        boss_owner.setdefault(_owner_of_boss(polys, b), []).append(b)

    for i in polys.outer_indices():
        loops = [polys.contours[i]] + [polys.contours[h] for h in polys.holes_of(i)]
        bottom_start = [add_vertices(l, z0) for l in loops]
        top_start = [add_vertices(l, z1) for l in loops]
        for l, b, t in zip(loops, bottom_start, top_start):
            add_walls(b, t, len(l))

        def ring_map(starts):
            return np.concatenate([np.arange(s, s + len(l)) for s, l in zip(starts, loops)])

        try:
            _, cap = triangulate(loops[0], loops[1:])
        except TriangulationFailure:
            raise
        bottom_map = ring_map(bottom_start)
        tris.append(bottom_map[cap][:, ::-1])

        own = boss_owner.get(i, [])
        if not own:
            tris.append(ring_map(top_start)[cap])
            continue
        rings = [b.polygon() for b in own]
        boss_base = [add_vertices(r, z1) for r in rings]
        _, top_cap = triangulate(loops[0], loops[1:] + [r[::-1] for r in rings])
        top_map = np.concatenate(
            [ring_map(top_start)]
            + [s + (len(r) - 1 - np.arange(len(r))) for s, r in zip(boss_base, rings)]
        )
        tris.append(top_map[top_cap])
        for b, r, s in zip(own, rings, boss_base):
            tip = add_vertices(r, z1 + b.height)
            add_walls(s, tip, len(r))
            _, tip_cap = triangulate(r)
            tris.append(tip + tip_cap)

    if not tris:
        raise EmptyShape("nothing to extrude")
    return TriMesh(np.concatenate(verts), np.concatenate(tris).astype(np.int64))


def mesh_component(part, resolution: int = DEFAULT_RESOLUTION, pose: str | None = "initial", z_offset: float = 0.0) -> TriMesh:
    """Mesh a compiled part, pins included, placed at its ``initial`` or ``final`` pose (or left local)."""
    polys = extract_contours(part.shape, resolution=resolution)
    bosses = [Boss(f.local_center, f.radius, f.height) for f in part.features if f.kind in ("pin", "grasp_pin")]
    mesh = extrude(polys, part.thickness, 0.0, bosses)
    if pose is None:
        return mesh if not z_offset else mesh.transformed(sdf.RigidTransform2.identity(), z_offset)
    placement = part.initial_pose if pose == "initial" else part.final_pose
    return mesh.transformed(placement, z_offset)


def part_layers(part, resolution: int = DEFAULT_RESOLUTION) -> tuple[PolygonSet, list[Boss]]:
    """Local contours and standing pins of a compiled part (what the slicer needs)."""
    polys = extract_contours(part.shape, resolution=resolution)
    bosses = [Boss(f.local_center, f.radius, f.height) for f in part.features if f.kind in ("pin", "grasp_pin")]
    return polys, bosses

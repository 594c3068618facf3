"""Support-free slicer for laid-out prismatic parts, and a G-code print-time estimator.

Output grammar (one statement per LF-terminated line)::

    line    := [command] [";" comment]
    command := word {" " word}
    word    := letter number

Commands used: ``G0``/``G1`` (X Y Z E F), ``G28``, ``G90``, ``G92``, ``M82``,
``M104``/``M109``/``M140`` (S). Layer blocks start with ``;LAYER:k``; the print
body ends at ``;END``, after which only the retract and park moves follow.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import shapely
from shapely.geometry import LineString, MultiPolygon, Polygon
from shapely.geometry.base import BaseGeometry

from ..mesher import Boss, PolygonSet

NOZZLE_TEMP_C = 210
BED_TEMP_C = 60
RETRACT_MM = 1.0
RETRACT_FEED = 1800.0
HEATUP_MIN = 5.0
_COORD_DIGITS = 3
_E_DIGITS = 6


class SliceWarning(UserWarning):
    """An inset collapsed a contour; that perimeter was skipped."""


class ParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class PrintParams:
    layer_height: float = 0.2
    nozzle: float = 0.4
    filament_diameter: float = 2.85
    perimeters: int = 2
    infill_density: float = 0.2
    print_feed: float = 3000.0
    travel_feed: float = 7200.0
    extrusion_width: float = 0.45
    bed: tuple[float, float] = (215.0, 215.0)

    def __post_init__(self):
        positive = {
            "layer_height": self.layer_height,
            "nozzle": self.nozzle,
            "filament_diameter": self.filament_diameter,
            "print_feed": self.print_feed,
            "travel_feed": self.travel_feed,
            "extrusion_width": self.extrusion_width,
            "bed width": self.bed[0],
            "bed depth": self.bed[1],
        }
        for name, value in positive.items():
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be > 0, got {value}")
        if not self.layer_height < self.nozzle:
            raise ValueError("layer_height must be smaller than the nozzle diameter")
        if self.perimeters < 0 or int(self.perimeters) != self.perimeters:
            raise ValueError("perimeters must be a non-negative integer")
        if not 0 <= self.infill_density <= 1:
            raise ValueError("infill_density must lie in [0, 1]")

    @property
    def filament_area(self) -> float:
        return math.pi * (self.filament_diameter / 2) ** 2

    def scaled_feeds(self, factor: float) -> PrintParams:
        return replace(self, print_feed=self.print_feed * factor, travel_feed=self.travel_feed * factor)


@dataclass(frozen=True)
class SliceJob:
    """One part in bed coordinates: a prism of ``thickness`` plus pins standing on its top face."""

    polys: PolygonSet
    thickness: float
    bosses: tuple[Boss, ...] = field(default_factory=tuple)

    @property
    def height(self) -> float:
        return self.thickness + max((b.height for b in self.bosses), default=0.0)


def _region(polys: PolygonSet) -> BaseGeometry:
    shells = []
    for i in polys.outer_indices():
        holes = [polys.contours[j] for j in polys.holes_of(i)]
        shells.append(Polygon(polys.contours[i], holes))
    return shapely.make_valid(shapely.unary_union(shells)) if shells else Polygon()


def _boss_region(bosses: Sequence[Boss]) -> BaseGeometry:
    return shapely.unary_union([Polygon(b.polygon()) for b in bosses]) if bosses else Polygon()


def _polygons(geom: BaseGeometry) -> list[Polygon]:
    if geom.is_empty:
        return []
    if isinstance(geom, Polygon):
        return [geom]
    if isinstance(geom, MultiPolygon):
        return list(geom.geoms)
    return [g for part in getattr(geom, "geoms", []) for g in _polygons(part)]


def _lines(geom: BaseGeometry) -> list[LineString]:
    if geom.is_empty:
        return []
    if isinstance(geom, LineString):
        return [geom]
    return [g for part in getattr(geom, "geoms", []) for g in _lines(part)]


def _rings(geom: BaseGeometry) -> list[np.ndarray]:
    out = []
    for poly in _polygons(geom):
        out.append(np.asarray(poly.exterior.coords))
        out.extend(np.asarray(r.coords) for r in poly.interiors)
    return out


def _infill_paths(region: BaseGeometry, spacing: float, vertical: bool) -> list[np.ndarray]:
    if region.is_empty:
        return []
    minx, miny, maxx, maxy = region.bounds
    lo, hi = (minx, maxx) if vertical else (miny, maxy)
    a, b = (miny - 1, maxy + 1) if vertical else (minx - 1, maxx + 1)
    offsets = spacing * np.arange(math.floor(lo / spacing), math.ceil(hi / spacing) + 1)
    if vertical:
        segs = [LineString([(c, a), (c, b)]) for c in offsets]
    else:
        segs = [LineString([(a, c), (b, c)]) for c in offsets]
    paths = []
    for k, piece in enumerate(shapely.intersection(np.array(segs, dtype=object), region)):
        axis = 1 if vertical else 0
        pieces = sorted((np.asarray(l.coords) for l in _lines(piece)), key=lambda p: p[:, axis].min())
        for p in pieces:
            p = p[np.argsort(p[:, axis])]
            paths.append(p[::-1] if k % 2 else p)
    return paths


class _Writer:
    def __init__(self, params: PrintParams):
        self.p = params
        self.lines: list[str] = []
        self.x = self.y = 0.0
        self.path_mm = 0.0  # exact extruded length; E is printed from it so rounding never accumulates
        self.e = 0.0
        self.e_per_mm = params.layer_height * params.extrusion_width / params.filament_area

    def emit(self, line: str):
        self.lines.append(line)

    @staticmethod
    def _r(v: float) -> float:
        return round(float(v), _COORD_DIGITS) + 0.0

    def travel(self, x: float, y: float):
        x, y = self._r(x), self._r(y)
        if (x, y) != (self.x, self.y):
            self.emit(f"G0 X{x:.3f} Y{y:.3f} F{self.p.travel_feed:g}")
            self.x, self.y = x, y

    def extrude_path(self, pts: np.ndarray):
        self.travel(*pts[0])
        first = True
        for x, y in pts[1:]:
            x, y = self._r(x), self._r(y)
            length = math.hypot(x - self.x, y - self.y)
            if length == 0:
                continue
            self.path_mm += length
            self.e = round(self.path_mm * self.e_per_mm, _E_DIGITS)
            feed = f" F{self.p.print_feed:g}" if first else ""
            self.emit(f"G1 X{x:.3f} Y{y:.3f} E{self.e:.{_E_DIGITS}f}{feed}")
            self.x, self.y = x, y
            first = False


def slice_gcode(jobs: Sequence[SliceJob], params: PrintParams | None = None) -> str:
    """Slice every job into one plate program; layers are global, parts visited in job order."""
    p = params or PrintParams()
    ew, h = p.extrusion_width, p.layer_height
    top = max((j.height for j in jobs), default=0.0)
    n_layers = int(math.ceil(top / h - 1e-9)) if top > 0 else 0
    plate = [(_region(j.polys), _boss_region(j.bosses), j) for j in jobs]
    for n, (body, pins, _) in enumerate(plate):
        geom = shapely.union(body, pins)
        if geom.is_empty:
            continue
        minx, miny, maxx, maxy = geom.bounds
        if minx < 0 or miny < 0 or maxx > p.bed[0] or maxy > p.bed[1]:
            raise ValueError(f"part {n} extends outside the {p.bed[0]:g} x {p.bed[1]:g} mm bed")

    w = _Writer(p)
    w.emit(";FLAVOR:Marlin")
    w.emit(";GENERATOR:mechforge")
    w.emit(f";LAYER_COUNT:{n_layers}")
    w.emit("G90")
    w.emit("M82")
    w.emit(f"M140 S{BED_TEMP_C}")
    w.emit(f"M104 S{NOZZLE_TEMP_C}")
    w.emit("G28")
    w.emit(f"M109 S{NOZZLE_TEMP_C}")
    w.emit("G92 E0")
    for k in range(n_layers):
        z = round((k + 1) * h, _COORD_DIGITS)
        mid = (k + 0.5) * h
        w.emit(f";LAYER:{k}")
        w.emit(f"G0 Z{z:.3f} F{p.travel_feed:g}")
        for n, (body, pins, job) in enumerate(plate):
            if mid < job.thickness:
                region = body
            else:
                standing = [b for b in job.bosses if mid < job.thickness + b.height]
                region = _boss_region(standing) if len(standing) != len(job.bosses) else pins
            if region.is_empty:
                continue
            for i in range(p.perimeters):
                inset = region.buffer(-(i + 0.5) * ew, join_style="mitre")
                if inset.is_empty:
                    warnings.warn(f"layer {k} part {n}: perimeter {i} collapsed", SliceWarning, stacklevel=2)
                    break
                for ring in _rings(inset):
                    w.extrude_path(ring)
            if p.infill_density > 0:
                core = region.buffer(-p.perimeters * ew, join_style="mitre") if p.perimeters else region
                for path in _infill_paths(core, ew / p.infill_density, vertical=bool(k % 2)):
                    w.extrude_path(path)
    w.emit(";END")
    w.emit(f"G1 E{w.e - RETRACT_MM:.{_E_DIGITS}f} F{RETRACT_FEED:g}")
    w.emit("G28 X0 Y0")
    w.emit("M104 S0")
    w.emit("M140 S0")
    return "\n".join(w.lines) + "\n"


def jobs_from_assembly(assembly, resolution: int | None = None) -> list[SliceJob]:
    """Plate jobs for every compiled component at its print-bed pose, in component order."""
    from ..mesher import DEFAULT_RESOLUTION, part_layers

    out = []
    for part in assembly.components:
        polys, bosses = part_layers(part, resolution or DEFAULT_RESOLUTION)
        pose = part.initial_pose
        placed = tuple(Boss(tuple(map(float, pose.apply(b.center))), b.radius, b.height) for b in bosses)
        out.append(SliceJob(polys.transformed(pose), part.thickness, placed))
    return out


_AXES = "XYZ"


def estimate_print_time(gcode: str, heatup_min: float = HEATUP_MIN) -> float:
    """Minutes: Σ move length / modal feed over G0/G1 moves plus a fixed heat-up allowance."""
    pos = {a: 0.0 for a in _AXES}
    feed = None
    minutes = 0.0
    for n, raw in enumerate(gcode.splitlines(), start=1):
        code = raw.split(";", 1)[0].strip()
        if not code:
            continue
        words = code.split()
        cmd = words[0].upper()
        if len(cmd) < 2 or cmd[0] not in "GM" or not cmd[1:].isdigit():
            raise ParseError(n, f"unrecognised command {words[0]!r}")
        params = {}
        for word in words[1:]:
            letter = word[0].upper()
            if not letter.isalpha():
                raise ParseError(n, f"malformed word {word!r}")
            if len(word) == 1:
                if cmd == "G28":
                    params[letter] = 0.0
                    continue
                raise ParseError(n, f"missing value in {word!r}")
            try:
                value = float(word[1:])
            except ValueError:
                raise ParseError(n, f"malformed number in {word!r}") from None
            if not math.isfinite(value):
                raise ParseError(n, f"non-finite value in {word!r}")
            params[letter] = value
        if cmd in ("G0", "G1"):
            if "F" in params:
                if params["F"] <= 0:
                    raise ParseError(n, "feedrate must be positive")
                feed = params["F"]
            target = {a: params.get(a, pos[a]) for a in _AXES}
            length = math.dist([pos[a] for a in _AXES], [target[a] for a in _AXES])
            if length > 0:
                if feed is None:
                    raise ParseError(n, "move before any feedrate was set")
                minutes += length / feed
            pos = target
        elif cmd == "G28":
            homed = [a for a in _AXES if a in params] or list(_AXES)
            for a in homed:
                pos[a] = 0.0
    return heatup_min + minutes

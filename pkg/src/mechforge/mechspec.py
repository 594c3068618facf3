"""Declarative mechanism documents.

A document is a UTF-8 JSON object describing the moving parts of a planar
mechanism, each part's shape as a nested primitive/boolean/transform tree, and
the pin-and-hole connections that attach parts to an auto-generated base. The
base itself never appears in ``parts``; connections refer to it implicitly
through the reserved id ``BASE``.

Parsing is strict: unknown keys, duplicate keys, non-finite numbers and wrong
types are all rejected. :func:`serialize_spec` emits a canonical byte form so
that ``parse_spec(serialize_spec(s)) == s`` and equal specs serialize to equal
bytes.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Any

from . import sdf

BASE_ID = "BASE"
CONNECTION_KINDS = ("pin_hole",)
MAX_TEETH = 1000

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")

# primitive kind -> (constructor, parameter keys in document order)
PRIMITIVE_PARAMS: dict[str, tuple[type, tuple[str, ...]]] = {
    "circle": (sdf.Circle, ("radius",)),
    "rect": (sdf.Rectangle, ("width", "height")),
    "balk": (sdf.Balk, ("length", "width")),
    "ring": (sdf.Ring, ("outer_radius", "inner_radius")),
    "gear": (sdf.Gear, ("pitch_radius", "teeth", "tooth_depth", "tooth_width_ratio")),
}
_PRIMITIVE_KIND = {cls: kind for kind, (cls, _) in PRIMITIVE_PARAMS.items()}


class SpecError(ValueError):
    """Base class for document errors."""


class SpecSyntaxError(SpecError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Violation:
    code: str
    field: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}({self.field}): {self.message}"


class SpecValidationError(SpecError):
    def __init__(self, violations: list[Violation]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))

    @property
    def field(self) -> str:
        return self.violations[0].field


@dataclass(frozen=True)
class PartSpec:
    id: str
    shape: sdf.Sdf2
    grasp_pin: tuple[float, float] | None = None


@dataclass(frozen=True)
class ConnectionSpec:
    moving_part: str
    anchor_local: tuple[float, float]
    anchor_global: tuple[float, float]
    pin_radius: float
    assembled_rotation: float = 0.0
    kind: str = "pin_hole"


@dataclass(frozen=True)
class MechanismSpec:
    name: str
    part_thickness: float
    parts: tuple[PartSpec, ...]
    connections: tuple[ConnectionSpec, ...] = ()
    global_params: dict[str, float] = field(default_factory=dict)

    def part(self, part_id: str) -> PartSpec:
        for p in self.parts:
            if p.id == part_id:
                return p
        raise KeyError(part_id)

    def connections_of(self, part_id: str) -> list[ConnectionSpec]:
        return [c for c in self.connections if c.moving_part == part_id]


@dataclass(frozen=True)
class CellParams:
    """Print bed and assembly cell configuration."""

    num_manipulators: int = 2
    bed_width: float = 215.0
    bed_depth: float = 215.0
    part_spacing: float = 5.0

    def __post_init__(self):
        if self.num_manipulators not in (1, 2):
            raise ValueError(f"num_manipulators must be 1 or 2, got {self.num_manipulators!r}")
        if not (self.bed_width > 0 and self.bed_depth > 0):
            raise ValueError("bed dimensions must be > 0")
        if not self.part_spacing >= 0:
            raise ValueError("part_spacing must be >= 0")


# ---------------------------------------------------------------------------
# shape documents


def shape_to_doc(shape: sdf.Sdf2) -> dict[str, Any]:
    kind = _PRIMITIVE_KIND.get(type(shape))
    if kind is not None:
        doc: dict[str, Any] = {"prim": kind}
        for name in PRIMITIVE_PARAMS[kind][1]:
            doc[name] = getattr(shape, name)
        return doc
    if isinstance(shape, sdf.Boolean):
        return {"op": shape.op, "args": [shape_to_doc(c) for c in shape.children]}
    if isinstance(shape, sdf.Transformed):
        t = shape.transform
        return {"xform": {"rot_rad": t.rotation, "dx_mm": t.tx, "dy_mm": t.ty}, "arg": shape_to_doc(shape.child)}
    if isinstance(shape, sdf.Offset):
        return {"offset_mm": shape.distance, "arg": shape_to_doc(shape.child)}
    raise TypeError(f"cannot serialize shape node {type(shape).__name__}")


def _fail(code: str, path: str, message: str):
    raise SpecValidationError([Violation(code, path, message)])


def _object(value, path: str, required: tuple[str, ...], optional: tuple[str, ...] = ()) -> dict:
    if not isinstance(value, dict):
        _fail("WrongType", path, f"expected an object, got {_type_name(value)}")
    for key in value:
        if key not in required and key not in optional:
            _fail("UnknownKey", f"{path}.{key}" if path else key, f"unknown key {key!r}")
    for key in required:
        if key not in value:
            _fail("MissingKey", f"{path}.{key}" if path else key, f"missing required key {key!r}")
    return value


def _type_name(value) -> str:
    return {dict: "object", list: "array", str: "string", bool: "boolean", type(None): "null"}.get(type(value), "number")


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail("WrongType", path, f"expected a number, got {_type_name(value)}")
    try:
        out = float(value)
    except OverflowError:
        out = math.inf
    if not math.isfinite(out):
        _fail("InvalidParameter", path, "number must be finite")
    return out


def _integer(value, path: str) -> int:
    x = _number(value, path)
    if x != int(x):
        _fail("WrongType", path, f"expected an integer, got {value!r}")
    return int(x)


def _pair(value, path: str) -> tuple[float, float]:
    if not isinstance(value, list) or len(value) != 2:
        _fail("WrongType", path, "expected an [x, y] pair")
    return (_number(value[0], f"{path}[0]"), _number(value[1], f"{path}[1]"))


def _identifier(value, path: str) -> str:
    if not isinstance(value, str):
        _fail("WrongType", path, f"expected a string, got {_type_name(value)}")
    if not _IDENT.match(value):
        _fail("InvalidIdentifier", path, f"{value!r} is not an identifier")
    return value


def shape_from_doc(doc, path: str = "shape") -> sdf.Sdf2:
    if not isinstance(doc, dict):
        _fail("WrongType", path, f"expected a shape object, got {_type_name(doc)}")
    if "prim" in doc:
        kind = doc["prim"]
        if not isinstance(kind, str) or kind not in PRIMITIVE_PARAMS:
            _fail("UnknownPrimitive", f"{path}.prim", f"unknown primitive {kind!r}")
        cls, names = PRIMITIVE_PARAMS[kind]
        _object(doc, path, ("prim", *names))
        kwargs = {}
        for name in names:
            if name == "teeth":
                kwargs[name] = _integer(doc[name], f"{path}.{name}")
                if kwargs[name] > MAX_TEETH:
                    _fail("InvalidParameter", f"{path}.{name}", f"teeth must be <= {MAX_TEETH}")
            else:
                kwargs[name] = _number(doc[name], f"{path}.{name}")
        try:
            return cls(**kwargs)
        except ValueError as exc:
            _fail("InvalidParameter", path, str(exc))
    if "op" in doc:
        _object(doc, path, ("op", "args"))
        op = doc["op"]
        if op not in ("union", "intersection", "difference"):
            _fail("UnknownOperation", f"{path}.op", f"unknown boolean op {op!r}")
        args = doc["args"]
        if not isinstance(args, list):
            _fail("WrongType", f"{path}.args", "expected an array of shapes")
        if len(args) < (2 if op == "difference" else 1):
            _fail("InvalidParameter", f"{path}.args", f"too few arguments for {op}")
        return sdf.Boolean(op, tuple(shape_from_doc(a, f"{path}.args[{i}]") for i, a in enumerate(args)))
    if "xform" in doc:
        _object(doc, path, ("xform", "arg"))
        x = _object(doc["xform"], f"{path}.xform", ("rot_rad", "dx_mm", "dy_mm"))
        t = sdf.RigidTransform2(
            _number(x["rot_rad"], f"{path}.xform.rot_rad"),
            _number(x["dx_mm"], f"{path}.xform.dx_mm"),
            _number(x["dy_mm"], f"{path}.xform.dy_mm"),
        )
        return sdf.Transformed(t, shape_from_doc(doc["arg"], f"{path}.arg"))
    if "offset_mm" in doc:
        _object(doc, path, ("offset_mm", "arg"))
        return sdf.Offset(_number(doc["offset_mm"], f"{path}.offset_mm"), shape_from_doc(doc["arg"], f"{path}.arg"))
    _fail("MalformedShape", path, "shape needs one of 'prim', 'op', 'xform' or 'offset_mm'")


# ---------------------------------------------------------------------------
# whole documents


def _line_col(text: str, pos: int) -> tuple[int, int]:
    pos = max(0, min(pos, len(text)))
    line = text.count("\n", 0, pos) + 1
    col = pos - (text.rfind("\n", 0, pos) + 1) + 1
    return line, col


class _DuplicateKey(Exception):
    def __init__(self, key: str):
        self.key = key


class _BadConstant(Exception):
    def __init__(self, token: str):
        self.token = token


def _pairs_hook(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise _DuplicateKey(k)
        out[k] = v
    return out


def _reject_constant(token):
    raise _BadConstant(token)


def _load_json(document: bytes | str):
    if isinstance(document, (bytes, bytearray)):
        try:
            text = bytes(document).decode("utf-8")
        except UnicodeDecodeError as exc:
            prefix = bytes(document)[: exc.start].decode("utf-8", errors="replace")
            line, col = _line_col(prefix, len(prefix))
            raise SpecSyntaxError(f"invalid UTF-8: {exc.reason}", line, col) from None
    else:
        text = document
    try:
        return json.loads(text, object_pairs_hook=_pairs_hook, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise SpecSyntaxError(exc.msg, exc.lineno, exc.colno) from None
    except _DuplicateKey as exc:
        pos = text.find(json.dumps(exc.key))
        line, col = _line_col(text, pos if pos >= 0 else 0)
        raise SpecSyntaxError(f"duplicate key {exc.key!r}", line, col) from None
    except _BadConstant as exc:
        pos = text.find(exc.token)
        line, col = _line_col(text, pos if pos >= 0 else 0)
        raise SpecSyntaxError(f"non-finite constant {exc.token}", line, col) from None
    except RecursionError:
        raise SpecSyntaxError("document nested too deeply", 1, 1) from None


def spec_from_obj(obj) -> MechanismSpec:
    """Build a spec from an already-decoded JSON value, checking structure only."""
    _object(obj, "", ("name", "thickness_mm", "parts", "connections"), ("global_params",))
    name = _identifier(obj["name"], "name")
    thickness = _number(obj["thickness_mm"], "thickness_mm")
    if not isinstance(obj["parts"], list):
        _fail("WrongType", "parts", "expected an array")
    parts = []
    for i, p in enumerate(obj["parts"]):
        path = f"parts[{i}]"
        _object(p, path, ("id", "shape"), ("grasp_pin",))
        grasp = _pair(p["grasp_pin"], f"{path}.grasp_pin") if "grasp_pin" in p else None
        parts.append(PartSpec(_identifier(p["id"], f"{path}.id"), shape_from_doc(p["shape"], f"{path}.shape"), grasp))
    if not isinstance(obj["connections"], list):
        _fail("WrongType", "connections", "expected an array")
    conns = []
    for i, c in enumerate(obj["connections"]):
        path = f"connections[{i}]"
        _object(c, path, ("kind", "moving_part", "anchor_local", "anchor_global", "pin_radius_mm", "assembled_rotation_rad"))
        if c["kind"] not in CONNECTION_KINDS:
            _fail("UnsupportedConnection", f"{path}.kind", f"unsupported connection kind {c['kind']!r}")
        conns.append(
            ConnectionSpec(
                moving_part=_identifier(c["moving_part"], f"{path}.moving_part"),
                anchor_local=_pair(c["anchor_local"], f"{path}.anchor_local"),
                anchor_global=_pair(c["anchor_global"], f"{path}.anchor_global"),
                pin_radius=_number(c["pin_radius_mm"], f"{path}.pin_radius_mm"),
                assembled_rotation=_number(c["assembled_rotation_rad"], f"{path}.assembled_rotation_rad"),
                kind=c["kind"],
            )
        )
    params = {}
    if "global_params" in obj:
        gp = obj["global_params"]
        if not isinstance(gp, dict):
            _fail("WrongType", "global_params", "expected an object")
        for k, v in gp.items():
            params[_identifier(k, f"global_params.{k}")] = _number(v, f"global_params.{k}")
    return MechanismSpec(name, thickness, tuple(parts), tuple(conns), params)


def parse_spec(document: bytes | str) -> MechanismSpec:
    """Parse and fully validate a mechanism document.

    Raises :class:`SpecSyntaxError` for malformed JSON and
    :class:`SpecValidationError` for anything structurally or semantically
    wrong.
    """
    obj = _load_json(document)
    try:
        spec = spec_from_obj(obj)
    except RecursionError:
        _fail("NestingTooDeep", "parts", "shape tree nested too deeply")
    violations = validate_spec(spec)
    if violations:
        raise SpecValidationError(violations)
    return spec


def spec_to_obj(spec: MechanismSpec) -> dict[str, Any]:
    obj: dict[str, Any] = {
        "name": spec.name,
        "thickness_mm": float(spec.part_thickness),
        "parts": [],
        "connections": [],
    }
    for p in spec.parts:
        doc: dict[str, Any] = {"id": p.id, "shape": shape_to_doc(p.shape)}
        if p.grasp_pin is not None:
            doc["grasp_pin"] = [float(p.grasp_pin[0]), float(p.grasp_pin[1])]
        obj["parts"].append(doc)
    for c in spec.connections:
        obj["connections"].append(
            {
                "kind": c.kind,
                "moving_part": c.moving_part,
                "anchor_local": [float(v) for v in c.anchor_local],
                "anchor_global": [float(v) for v in c.anchor_global],
                "pin_radius_mm": float(c.pin_radius),
                "assembled_rotation_rad": float(c.assembled_rotation),
            }
        )
    if spec.global_params:
        obj["global_params"] = {k: float(spec.global_params[k]) for k in sorted(spec.global_params)}
    return obj


def serialize_spec(spec: MechanismSpec) -> bytes:
    """Canonical bytes: fixed key order, shortest round-trip floats, LF endings."""
    return (json.dumps(spec_to_obj(spec), indent=2, allow_nan=False) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# semantic validation


def _finite(*values) -> bool:
    return all(isinstance(v, (int, float)) and math.isfinite(v) for v in values)


def validate_spec(spec: MechanismSpec) -> list[Violation]:
    """Every broken invariant of ``spec``; empty when the spec is usable."""
    out: list[Violation] = []
    if not isinstance(spec.name, str) or not _IDENT.match(spec.name):
        out.append(Violation("InvalidIdentifier", "name", f"{spec.name!r} is not an identifier"))
    if not (_finite(spec.part_thickness) and spec.part_thickness > 0):
        out.append(Violation("InvalidParameter", "part_thickness", "part thickness must be > 0"))
    if not spec.parts:
        out.append(Violation("EmptyParts", "parts", "a mechanism needs at least one part"))

    ids: dict[str, int] = {}
    for i, p in enumerate(spec.parts):
        path = f"parts[{i}]"
        if not isinstance(p.id, str) or not _IDENT.match(p.id):
            out.append(Violation("InvalidIdentifier", f"{path}.id", f"{p.id!r} is not an identifier"))
            continue
        if p.id == BASE_ID:
            out.append(Violation("ReservedId", f"{path}.id", f"{BASE_ID!r} is reserved for the generated base"))
        if p.id in ids:
            out.append(Violation("DuplicateId", f"{path}.id", f"duplicate part id {p.id!r}"))
        else:
            ids[p.id] = i
        if not isinstance(p.shape, sdf.Sdf2):
            out.append(Violation("MalformedShape", f"{path}.shape", "shape must be an Sdf2 tree"))
        if p.grasp_pin is not None and not _finite(*p.grasp_pin):
            out.append(Violation("InvalidParameter", f"{path}.grasp_pin", "grasp pin hint must be finite"))

    for i, c in enumerate(spec.connections):
        path = f"connections[{i}]"
        if c.kind not in CONNECTION_KINDS:
            out.append(Violation("UnsupportedConnection", f"{path}.kind", f"unsupported connection kind {c.kind!r}"))
        if c.moving_part not in ids:
            out.append(Violation("UnknownPart", f"{path}.moving_part", f"no part named {c.moving_part!r}"))
        if not (_finite(c.pin_radius) and c.pin_radius > 0):
            out.append(Violation("InvalidParameter", f"{path}.pin_radius", "pin_radius must be > 0"))
        if not _finite(*c.anchor_local, *c.anchor_global, c.assembled_rotation):
            out.append(Violation("InvalidParameter", path, "anchors and rotation must be finite"))
            continue
        if c.moving_part in ids:
            part = spec.parts[ids[c.moving_part]]
            if isinstance(part.shape, sdf.Sdf2) and not sdf.evaluate(part.shape, c.anchor_local) < 0:
                out.append(
                    Violation(
                        "AnchorOutsidePart",
                        f"{path}.anchor_local",
                        f"anchor {c.anchor_local} is not strictly inside part {c.moving_part!r}",
                    )
                )
    out.extend(_pose_consistency(spec, ids))
    return out


def _pose_consistency(spec: MechanismSpec, ids: dict[str, int]) -> list[Violation]:
    """A part pinned more than once must admit a single rigid placement."""
    out = []
    for pid in ids:
        conns = [(i, c) for i, c in enumerate(spec.connections) if c.moving_part == pid]
        if len(conns) < 2 or not all(_finite(*c.anchor_local, *c.anchor_global, c.assembled_rotation) for _, c in conns):
            continue
        _, first = conns[0]
        pose = final_pose_for(first)
        for i, c in conns[1:]:
            mapped = pose.apply(c.anchor_local)
            same_rot = math.isclose(
                math.remainder(c.assembled_rotation - first.assembled_rotation, 2 * math.pi), 0.0, abs_tol=1e-9
            )
            if not same_rot or math.hypot(mapped[0] - c.anchor_global[0], mapped[1] - c.anchor_global[1]) > 1e-6:
                out.append(
                    Violation(
                        "InconsistentConnections",
                        f"connections[{i}]",
                        f"part {pid!r} cannot satisfy all of its pin placements at once",
                    )
                )
    return out


def final_pose_for(conn: ConnectionSpec) -> sdf.RigidTransform2:
    """Pose carrying ``anchor_local`` onto ``anchor_global`` with the assembled rotation."""
    rot = sdf.RigidTransform2.rotation_about_origin(conn.assembled_rotation)
    ax, ay = rot.apply(conn.anchor_local)
    return sdf.RigidTransform2(
        float(conn.assembled_rotation), float(conn.anchor_global[0] - ax), float(conn.anchor_global[1] - ay)
    )

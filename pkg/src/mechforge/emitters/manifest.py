"""Assembly manifest: the JSON hand-off between blueprint, planner and robots."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import jsonschema

from ..sdf import RigidTransform2

SCHEMA_VERSION = 1
FEATURE_KINDS = ("pin", "hole", "grasp_pin")


class SchemaError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path


@dataclass(frozen=True)
class Feature:
    """Pin, hole or grasp pin in its component's local frame."""

    kind: str
    local_center: tuple[float, float]
    radius: float
    height: float = 0.0
    mate: tuple[str, int] | None = None

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if not self.radius > 0:
            raise ValueError("feature radius must be > 0")


@dataclass(frozen=True)
class ManifestComponent:
    id: str
    initial_pose: RigidTransform2
    final_pose: RigidTransform2
    thickness: float
    precedence_rank: int
    features: tuple[Feature, ...] = ()

    def grasp_feature(self) -> Feature | None:
        return next((f for f in self.features if f.kind == "grasp_pin"), None)

    def has_hole(self) -> bool:
        return any(f.kind == "hole" for f in self.features)


@dataclass(frozen=True)
class AssemblyManifest:
    components: tuple[ManifestComponent, ...]
    schema_version: int = SCHEMA_VERSION

    def component(self, cid: str) -> ManifestComponent:
        for c in self.components:
            if c.id == cid:
                return c
        raise KeyError(cid)


_NUM = {"type": "number"}
_POSE = {
    "type": "object",
    "additionalProperties": False,
    "required": ["x_mm", "y_mm", "rot_rad"],
    "properties": {"x_mm": _NUM, "y_mm": _NUM, "rot_rad": _NUM},
}
_PAIR = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
MANIFEST_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "components"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "components": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "initial_pose", "final_pose", "thickness_mm", "precedence_rank", "features"],
                "properties": {
                    "id": {"type": "string", "pattern": "^[A-Za-z_][A-Za-z0-9_]*$"},
                    "initial_pose": _POSE,
                    "final_pose": _POSE,
                    "thickness_mm": {"type": "number", "exclusiveMinimum": 0},
                    "precedence_rank": {"type": "integer", "minimum": 0},
                    "features": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["kind", "local_center", "radius_mm", "height_mm", "mate"],
                            "properties": {
                                "kind": {"enum": list(FEATURE_KINDS)},
                                "local_center": _PAIR,
                                "radius_mm": {"type": "number", "exclusiveMinimum": 0},
                                "height_mm": {"type": "number", "minimum": 0},
                                "mate": {
                                    "oneOf": [
                                        {"type": "null"},
                                        {
                                            "type": "object",
                                            "additionalProperties": False,
                                            "required": ["part", "feature"],
                                            "properties": {
                                                "part": {"type": "string"},
                                                "feature": {"type": "integer", "minimum": 0},
                                            },
                                        },
                                    ]
                                },
                            },
                        },
                    },
                },
            },
        },
    },
}
_VALIDATOR = jsonschema.Draft202012Validator(MANIFEST_SCHEMA)


def _pose_obj(t: RigidTransform2) -> dict:
    return {"x_mm": float(t.tx), "y_mm": float(t.ty), "rot_rad": float(t.rotation)}


def manifest_to_obj(manifest: AssemblyManifest) -> dict:
    comps = []
    for c in manifest.components:
        comps.append(
            {
                "id": c.id,
                "initial_pose": _pose_obj(c.initial_pose),
                "final_pose": _pose_obj(c.final_pose),
                "thickness_mm": float(c.thickness),
                "precedence_rank": int(c.precedence_rank),
                "features": [
                    {
                        "kind": f.kind,
                        "local_center": [float(f.local_center[0]), float(f.local_center[1])],
                        "radius_mm": float(f.radius),
                        "height_mm": float(f.height),
                        "mate": None if f.mate is None else {"part": f.mate[0], "feature": int(f.mate[1])},
                    }
                    for f in c.features
                ],
            }
        )
    return {"schema_version": manifest.schema_version, "components": comps}


def write_manifest(manifest: AssemblyManifest) -> bytes:
    """Canonical JSON: sorted keys, two-space indent, shortest round-trip floats, LF."""
    return (json.dumps(manifest_to_obj(manifest), sort_keys=True, indent=2, allow_nan=False) + "\n").encode("utf-8")


def _reject(token):
    raise SchemaError("", f"non-finite number {token}")


def _json_path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def read_manifest(data: bytes | str) -> AssemblyManifest:
    try:
        text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
        obj = json.loads(text, parse_constant=_reject)
    except (UnicodeDecodeError, json.JSONDecodeError, RecursionError) as exc:
        raise SchemaError("", f"not valid JSON: {exc}") from None
    errors = sorted(_VALIDATOR.iter_errors(obj), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        raise SchemaError(_json_path(err.absolute_path), err.message)

    comps = []
    for c in obj["components"]:
        for key in ("initial_pose", "final_pose"):
            if not all(math.isfinite(v) for v in c[key].values()):
                raise SchemaError(f"{c['id']}.{key}", "pose must be finite")
        comps.append(
            ManifestComponent(
                id=c["id"],
                initial_pose=RigidTransform2(c["initial_pose"]["rot_rad"], c["initial_pose"]["x_mm"], c["initial_pose"]["y_mm"]),
                final_pose=RigidTransform2(c["final_pose"]["rot_rad"], c["final_pose"]["x_mm"], c["final_pose"]["y_mm"]),
                thickness=float(c["thickness_mm"]),
                precedence_rank=c["precedence_rank"],
                features=tuple(
                    Feature(
                        kind=f["kind"],
                        local_center=(float(f["local_center"][0]), float(f["local_center"][1])),
                        radius=float(f["radius_mm"]),
                        height=float(f["height_mm"]),
                        mate=None if f["mate"] is None else (f["mate"]["part"], f["mate"]["feature"]),
                    )
                    for f in c["features"]
                ),
            )
        )
    ids = [c.id for c in comps]
    if len(set(ids)) != len(ids):
        raise SchemaError("components", "duplicate component id")
    ranks = sorted(c.precedence_rank for c in comps)
    if ranks != list(range(len(comps))):
        raise SchemaError("components", "precedence ranks must be 0..n-1")
    if comps and "BASE" in ids and next(c for c in comps if c.id == "BASE").precedence_rank != 0:
        raise SchemaError("components", "BASE must have precedence rank 0")
    return AssemblyManifest(tuple(comps), obj["schema_version"])

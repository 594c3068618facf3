from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mechforge import sdf
from mechforge.mechspec import (
    CellParams,
    ConnectionSpec,
    MechanismSpec,
    PartSpec,
    SpecError,
    SpecSyntaxError,
    SpecValidationError,
    parse_spec,
    serialize_spec,
    validate_spec,
)

from .conftest import FIXTURES, random_tree


def random_spec(seed: int) -> MechanismSpec:
    rng = np.random.default_rng(seed)
    parts, conns = [], []
    for i in range(int(rng.integers(1, 5))):
        r = float(rng.uniform(2, 6))
        shape = sdf.union(sdf.Circle(r), random_tree(rng, 2))
        hint = (float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1))) if rng.random() < 0.3 else None
        parts.append(PartSpec(f"part_{i}", shape, hint))
        if rng.random() < 0.7:
            ang = rng.uniform(0, 2 * math.pi)
            rad = rng.uniform(0, r / 2)
            conns.append(
                ConnectionSpec(
                    f"part_{i}",
                    (float(rad * math.cos(ang)), float(rad * math.sin(ang))),
                    (float(rng.uniform(-50, 50)), float(rng.uniform(-50, 50))),
                    float(rng.uniform(0.5, 3)),
                    float(rng.uniform(-math.pi, math.pi)),
                )
            )
    params = {f"k{j}": float(rng.normal()) for j in range(int(rng.integers(0, 3)))}
    return MechanismSpec(f"mech_{seed}", float(rng.uniform(1, 8)), tuple(parts), tuple(conns), params)


def test_gripper_fixture_parses(gripper_bytes):
    spec = parse_spec(gripper_bytes)
    assert [p.id for p in spec.parts] == ["finger_left", "finger_right"]
    assert len(spec.connections) == 2
    assert validate_spec(spec) == []


def test_unknown_connection_target_is_named(gripper_bytes):
    doc = json.loads(gripper_bytes)
    doc["connections"][0]["moving_part"] = "fingr"
    with pytest.raises(SpecValidationError) as exc:
        parse_spec(json.dumps(doc).encode())
    assert "fingr" in str(exc.value)
    assert exc.value.violations[0].code == "UnknownPart"


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_round_trip_generated_specs(seed):
    spec = random_spec(seed)
    assert validate_spec(spec) == []
    doc = serialize_spec(spec)
    parsed = parse_spec(doc)
    assert parsed == spec
    assert serialize_spec(parsed) == doc


def test_serialization_is_deterministic_and_explicit(gripper_bytes):
    spec = parse_spec(gripper_bytes)
    assert serialize_spec(spec) == serialize_spec(spec)
    single = MechanismSpec("solo", 3.0, (PartSpec("a", sdf.Circle(5)),))
    obj = json.loads(serialize_spec(single))
    assert obj["connections"] == []
    assert b"\r" not in serialize_spec(single)


def test_canonical_gripper_golden_bytes(gripper_bytes):
    golden = (FIXTURES / "gripper_canonical.json").read_bytes()
    assert serialize_spec(parse_spec(gripper_bytes)) == golden


def test_validate_zero_pin_radius(gripper_bytes):
    spec = parse_spec(gripper_bytes)
    bad = MechanismSpec(
        spec.name,
        spec.part_thickness,
        spec.parts,
        (ConnectionSpec("finger_left", (0.0, 0.0), (-15.0, 0.0), 0.0, 0.0),),
    )
    violations = validate_spec(bad)
    assert [(v.code, v.field.rsplit(".", 1)[-1]) for v in violations] == [("InvalidParameter", "pin_radius")]


def test_validate_anchor_outside_part(gripper_bytes):
    spec = parse_spec(gripper_bytes)
    shape = spec.part("finger_left").shape
    exterior = (0.0, 9.2)
    assert sdf.evaluate(shape, exterior) == pytest.approx(1.2)
    bad = MechanismSpec(
        spec.name,
        spec.part_thickness,
        spec.parts,
        (ConnectionSpec("finger_left", exterior, (-15.0, 0.0), 2.0, 0.0),),
    )
    assert [v.code for v in validate_spec(bad)] == ["AnchorOutsidePart"]


@pytest.mark.parametrize(
    "mutate, code",
    [
        (lambda d: d["parts"].append(dict(d["parts"][0])), "DuplicateId"),
        (lambda d: d["parts"][0].update(id="BASE"), "ReservedId"),
        (lambda d: d.update(thickness_mm=0), "InvalidParameter"),
        (lambda d: d.update(parts=[], connections=[]), "EmptyParts"),
        (lambda d: d.update(colour="red"), "UnknownKey"),
        (lambda d: d["parts"][0]["shape"]["args"][1].update(radius=-1), "InvalidParameter"),
        (lambda d: d["parts"][0]["shape"]["args"][1].update(prim="hexagon"), "UnknownPrimitive"),
        (lambda d: d["connections"][0].update(kind="weld"), "UnsupportedConnection"),
        (lambda d: d["connections"][0].update(anchor_local=[1]), "WrongType"),
        (lambda d: d["connections"][0].pop("pin_radius_mm"), "MissingKey"),
        (lambda d: d.update(name="has space"), "InvalidIdentifier"),
        (lambda d: d["connections"].append(dict(d["connections"][0], anchor_global=[0.0, 0.0])), "InconsistentConnections"),
    ],
)
def test_validation_errors(gripper_bytes, mutate, code):
    doc = json.loads(gripper_bytes)
    mutate(doc)
    with pytest.raises(SpecValidationError) as exc:
        parse_spec(json.dumps(doc).encode())
    assert code in [v.code for v in exc.value.violations]
    assert exc.value.field


@pytest.mark.parametrize(
    "text",
    [
        b"{",
        b'{"name": "x",}',
        b'{"name": "a", "name": "b"}',
        b'{"thickness_mm": NaN}',
        b"\xff\xfe",
        b"",
        b"[1, 2",
    ],
)
def test_syntax_errors_carry_location(text):
    with pytest.raises(SpecSyntaxError) as exc:
        parse_spec(text)
    lines = text.decode("utf-8", errors="replace").split("\n")
    assert 1 <= exc.value.line <= len(lines)
    assert 1 <= exc.value.column <= len(lines[exc.value.line - 1]) + 1


def test_non_object_top_level():
    with pytest.raises(SpecValidationError):
        parse_spec(b"[1, 2, 3]")


def test_deep_nesting_is_an_error_not_a_crash():
    with pytest.raises(SpecError):
        parse_spec(b"[" * 100_000 + b"]" * 100_000)


def test_fuzzed_mutations_never_crash(gripper_bytes):
    rng = np.random.default_rng(11)
    data = np.frombuffer(gripper_bytes, dtype=np.uint8)
    alphabet = np.frombuffer(b'{}[]",:0123456789.-eE \nabcxyzNaInfty\x00\xff', dtype=np.uint8)
    outcomes = {"ok": 0, "syntax": 0, "validation": 0}
    for _ in range(100_000):
        buf = data.copy()
        for _ in range(int(rng.integers(1, 4))):
            op = rng.integers(3)
            pos = int(rng.integers(len(buf)))
            if op == 0:
                buf[pos] = alphabet[rng.integers(len(alphabet))]
            elif op == 1:
                buf = np.delete(buf, pos)
            else:
                buf = np.insert(buf, pos, alphabet[rng.integers(len(alphabet))])
        blob = buf.tobytes()
        try:
            parse_spec(blob)
            outcomes["ok"] += 1
        except SpecSyntaxError as exc:
            text = blob.decode("utf-8", errors="replace")
            assert 1 <= exc.line <= text.count("\n") + 1
            assert exc.column >= 1
            outcomes["syntax"] += 1
        except SpecValidationError:
            outcomes["validation"] += 1
    assert outcomes["syntax"] > 0 and outcomes["validation"] > 0 and outcomes["ok"] > 0


def test_cell_params_constraints():
    CellParams(num_manipulators=1)
    with pytest.raises(ValueError):
        CellParams(num_manipulators=3)
    with pytest.raises(ValueError):
        CellParams(bed_width=0)
    with pytest.raises(ValueError):
        CellParams(part_spacing=-1)


def _random_json(rng, depth=0):
    k = int(rng.integers(7 if depth < 2 else 5))
    if k == 5:
        return [_random_json(rng, depth + 1)]
    if k == 6:
        return {"prim": _random_json(rng, depth + 1)}
    return [None, True, "x", float(rng.normal() * 10), int(rng.integers(-3, 30))][k]


def _paths(obj, prefix=()):
    yield prefix
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _paths(v, prefix + (k,))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _paths(v, prefix + (i,))


def test_structural_fuzz_never_crashes(gripper_bytes):
    rng = np.random.default_rng(5)
    base = json.loads(gripper_bytes)
    paths = [p for p in _paths(base) if p]
    for _ in range(5000):
        doc = json.loads(gripper_bytes)
        path = paths[rng.integers(len(paths))]
        target = doc
        for key in path[:-1]:
            target = target[key]
        target[path[-1]] = _random_json(rng)
        try:
            parse_spec(json.dumps(doc).encode())
        except SpecError:
            pass

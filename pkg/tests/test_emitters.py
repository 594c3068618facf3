from __future__ import annotations

import json
import math
import re
import warnings

import numpy as np
import pytest

from mechforge import sdf
from mechforge.compiler import build_manifest, compile_assembly
from mechforge.emitters import (
    ParseError,
    PrintParams,
    SchemaError,
    SliceJob,
    SliceWarning,
    estimate_print_time,
    jobs_from_assembly,
    read_manifest,
    slice_gcode,
    write_manifest,
    write_stl,
)
from mechforge.mechspec import parse_spec
from mechforge.mesher import PolygonSet, extract_contours, extrude, mesh_component

from .conftest import random_tree
from .oracles import gcode_extrusion_balance, gcode_moves, parse_binary_stl


def square(x0: float, y0: float, size: float) -> PolygonSet:
    return PolygonSet([np.array([[x0, y0], [x0 + size, y0], [x0 + size, y0 + size], [x0, y0 + size]])])


@pytest.fixture(scope="module")
def gripper_assembly():
    from .conftest import FIXTURES

    return compile_assembly(parse_spec((FIXTURES / "gripper.json").read_bytes()))


@pytest.fixture(scope="module")
def gripper_gcode(gripper_assembly):
    return slice_gcode(jobs_from_assembly(gripper_assembly))


# STL


def test_prism_stl_is_684_bytes():
    mesh = extrude(square(0, 0, 20), 5.0)
    assert len(mesh.triangles) == 12
    data = write_stl(mesh)
    assert len(data) == 684
    assert data[:9] == b"mechforge" and data[9:80] == bytes(71)


def test_stl_length_law_and_round_trip():
    rng = np.random.default_rng(7)
    for _ in range(50):
        shape = random_tree(rng, 2)
        try:
            mesh = extrude(extract_contours(shape, resolution=48), float(rng.uniform(0.5, 6)))
        except Exception:
            mesh = extrude(square(0, 0, float(rng.uniform(1, 30))), 2.0)
        data = write_stl(mesh)
        n = len(mesh.triangles)
        assert len(data) == 84 + 50 * n
        header, normals, verts = parse_binary_stl(data)
        assert header.startswith(b"mechforge")
        expected = mesh.vertices[mesh.triangles].astype(np.float32)
        assert np.array_equal(verts, expected)
        assert np.array_equal(normals, mesh.normals.astype(np.float32))


def test_stl_attribute_bytes_are_zero():
    data = write_stl(extrude(square(0, 0, 10), 1.0))
    for i in range(12):
        off = 84 + 50 * i + 48
        assert data[off : off + 2] == b"\0\0"


# manifest


def test_manifest_write_twice_identical(gripper_assembly):
    manifest = build_manifest(gripper_assembly)
    a, b = write_manifest(manifest), write_manifest(manifest)
    assert a == b
    assert a.endswith(b"\n") and b"\r" not in a
    assert read_manifest(a) == manifest
    assert write_manifest(read_manifest(a)) == a
    assert json.loads(a)["components"][0]["id"] == "BASE"


def test_manifest_schema_error_paths(gripper_assembly):
    obj = json.loads(write_manifest(build_manifest(gripper_assembly)))
    obj["components"][1]["thickness_mm"] = -1
    with pytest.raises(SchemaError) as exc:
        read_manifest(json.dumps(obj))
    assert exc.value.path == "components[1].thickness_mm"

    obj = json.loads(write_manifest(build_manifest(gripper_assembly)))
    obj["components"][2]["features"][0]["mate"] = {"part": "BASE"}
    with pytest.raises(SchemaError) as exc:
        read_manifest(json.dumps(obj))
    assert exc.value.path.startswith("components[2].features[0].mate")

    obj = json.loads(write_manifest(build_manifest(gripper_assembly)))
    obj["components"][0]["precedence_rank"], obj["components"][1]["precedence_rank"] = 1, 0
    with pytest.raises(SchemaError, match="BASE"):
        read_manifest(json.dumps(obj))


def test_manifest_rejects_non_finite():
    with pytest.raises(SchemaError):
        read_manifest(b'{"schema_version": 1, "components": [], "x": NaN}')
    with pytest.raises(SchemaError):
        read_manifest(b"\xff")


def test_manifest_byte_fuzz(gripper_assembly):
    manifest = build_manifest(gripper_assembly)
    data = bytearray(write_manifest(manifest))
    rng = np.random.default_rng(3)
    alphabet = b'{}[]",:0123456789.-eE nulltrux\x00\xff'
    for _ in range(1000):
        buf = bytearray(data)
        buf[int(rng.integers(len(buf)))] = alphabet[int(rng.integers(len(alphabet)))]
        try:
            read_manifest(bytes(buf))
        except SchemaError:
            pass


def test_pose_float_mutation_detected(gripper_assembly):
    manifest = build_manifest(gripper_assembly)
    text = write_manifest(manifest).decode()
    rng = np.random.default_rng(4)
    digits = [m.start() for m in re.finditer(r'(?<="x_mm": |"y_mm": )-?\d', text)]
    assert digits
    for _ in range(200):
        pos = digits[int(rng.integers(len(digits)))]
        while not text[pos].isdigit():
            pos += 1
        new = str((int(text[pos]) + int(rng.integers(1, 10))) % 10)
        mutated = text[:pos] + new + text[pos + 1 :]
        try:
            assert read_manifest(mutated) != manifest
        except SchemaError:
            pass


# G-code


def test_layer_markers_for_4mm_part():
    g = slice_gcode([SliceJob(square(10, 10, 20), 4.0)])
    markers = re.findall(r"^;LAYER:(\d+)$", g, flags=re.M)
    assert markers == [str(k) for k in range(20)]


def test_zero_infill_prints_perimeters_only():
    g = slice_gcode([SliceJob(square(10, 10, 20), 1.0)], PrintParams(infill_density=0.0))
    per_layer = [block.count("\nG1 ") for block in g.split(";END")[0].split(";LAYER:")[1:]]
    assert per_layer == [8] * 5  # two square loops of four edges each
    g = slice_gcode([SliceJob(square(10, 10, 20), 1.0)], PrintParams(infill_density=0.0, perimeters=0))
    assert all(cmd != "G1" or "E" not in p for cmd, p, sec in gcode_moves(g) if sec == "body")


def test_infill_alternates_direction():
    g = slice_gcode([SliceJob(square(10, 10, 20), 0.4)], PrintParams(perimeters=0, infill_density=0.5))
    blocks = g.split(";LAYER:")[1:]
    assert len(blocks) == 2
    for k, block in enumerate(blocks):
        x, y = None, None
        for line in block.splitlines():
            m = re.match(r"G[01] X([-\d.]+) Y([-\d.]+)( E)?", line)
            if not m:
                continue
            nx, ny = float(m.group(1)), float(m.group(2))
            if m.group(3):
                assert (nx == x) if k % 2 else (ny == y)
            x, y = nx, ny


def test_gripper_gcode_safety(gripper_gcode):
    bed = PrintParams().bed
    z_prev, e_prev = -math.inf, -math.inf
    for cmd, p, section in gcode_moves(gripper_gcode):
        if cmd not in ("G0", "G1"):
            continue
        if "X" in p:
            assert 0 <= p["X"] <= bed[0]
        if "Y" in p:
            assert 0 <= p["Y"] <= bed[1]
        if section == "body":
            if "Z" in p:
                assert p["Z"] > z_prev
                z_prev = p["Z"]
            if "E" in p:
                assert p["E"] >= e_prev
                e_prev = p["E"]
    assert not re.search(r"^G[23] ", gripper_gcode, flags=re.M)
    assert "SUPPORT" not in gripper_gcode.upper() and "RAFT" not in gripper_gcode.upper()


def test_gripper_mass_conservation(gripper_gcode):
    p = PrintParams()
    filament, path = gcode_extrusion_balance(gripper_gcode, p.filament_diameter, p.layer_height, p.extrusion_width)
    assert path > 0
    assert abs(filament - path) / path <= 1e-6


def test_gcode_deterministic(gripper_assembly, gripper_gcode):
    assert slice_gcode(jobs_from_assembly(gripper_assembly)) == gripper_gcode


def test_collapsed_perimeter_warns():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        g = slice_gcode([SliceJob(square(10, 10, 0.6), 0.2)])
    assert any(issubclass(w.category, SliceWarning) for w in caught)
    assert ";LAYER:0" in g


def test_part_outside_bed_rejected():
    with pytest.raises(ValueError):
        slice_gcode([SliceJob(square(210, 10, 20), 1.0)])


def test_print_params_validation():
    with pytest.raises(ValueError):
        PrintParams(layer_height=0.5)
    with pytest.raises(ValueError):
        PrintParams(infill_density=1.5)
    with pytest.raises(ValueError):
        PrintParams(print_feed=0)


def test_estimate_examples():
    assert estimate_print_time(slice_gcode([])) == 5.0
    assert estimate_print_time("G1 X100 F3000\n") == pytest.approx(5.0 + 100 / 3000, abs=1e-12)
    assert estimate_print_time("; only a comment\n\n") == 5.0


def test_estimate_linear_in_feed(gripper_assembly):
    jobs = jobs_from_assembly(gripper_assembly, resolution=96)
    base = PrintParams()
    t1 = estimate_print_time(slice_gcode(jobs, base)) - 5.0
    t2 = estimate_print_time(slice_gcode(jobs, base.scaled_feeds(2.0))) - 5.0
    assert t2 == pytest.approx(t1 / 2, rel=1e-12)


@pytest.mark.parametrize("line", ["G1 X1e", "G1 Xabc", "Q12", "G1 X", "G1 Xnan F100", "G1 X10"])
def test_estimate_parse_errors(line):
    with pytest.raises(ParseError):
        estimate_print_time(line + "\n")


def test_meshes_emit_for_every_component(gripper_assembly):
    for part in gripper_assembly.components:
        mesh = mesh_component(part, resolution=96)
        assert mesh.is_watertight()
        assert len(write_stl(mesh)) == 84 + 50 * len(mesh.triangles)
    assert sdf.bounding_box(gripper_assembly.base.shape).area > 0

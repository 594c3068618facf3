from __future__ import annotations

import math

import numpy as np
import pytest

from mechforge import sdf
from mechforge.mesher import (
    Boss,
    EmptyShape,
    PolygonSet,
    TriMesh,
    extract_contours,
    extrude,
    signed_area,
    triangulate,
)

from .conftest import random_tree
from .oracles import directed_edges_paired, edge_use_counts, shoelace_area, signed_volume

SQUARE = np.array([[-10.0, -10.0], [10.0, -10.0], [10.0, 10.0], [-10.0, 10.0]])


def assert_closed(mesh: TriMesh):
    counts = edge_use_counts(mesh.triangles)
    assert all(c == 2 for c in counts.values())
    assert directed_edges_paired(mesh.triangles)
    assert signed_volume(mesh.vertices, mesh.triangles) > 0


def test_square_prism_volume():
    mesh = extrude(PolygonSet([SQUARE]), 5.0)
    assert len(mesh.triangles) == 12
    assert_closed(mesh)
    assert mesh.volume() == pytest.approx(2000.0, rel=1e-6)


def test_circle_contour_area():
    polys = extract_contours(sdf.Circle(10), resolution=256)
    assert len(polys.contours) == 1
    assert signed_area(polys.contours[0]) > 0
    assert abs(polys.area - math.pi * 100) / (math.pi * 100) < 0.005


def test_ring_contours_orientation():
    polys = extract_contours(sdf.Ring(10, 4), resolution=128)
    assert len(polys.contours) == 2
    areas = sorted(shoelace_area(c) for c in polys.contours)
    assert areas[0] < 0 < areas[1]
    hole = [i for i, c in enumerate(polys.contours) if shoelace_area(c) < 0][0]
    outer = polys.outer_indices()[0]
    assert polys.parents[hole] == outer
    assert polys.holes_of(outer) == [hole]


def test_empty_shape():
    far = sdf.transform(sdf.RigidTransform2.translation(100, 0), sdf.Circle(1))
    with pytest.raises(EmptyShape):
        extract_contours(sdf.Circle(1), bbox=sdf.bounding_box(far), resolution=32)
    with pytest.raises(EmptyShape):
        extract_contours(sdf.intersection(sdf.Circle(1), far))


def test_cylinder_volume():
    mesh = extrude(extract_contours(sdf.Circle(10), resolution=256), 4.0)
    assert_closed(mesh)
    assert abs(mesh.volume() - 400 * math.pi) / (400 * math.pi) < 0.01


def test_ring_solid_is_genus_one():
    mesh = extrude(extract_contours(sdf.Ring(10, 4), resolution=128), 3.0)
    assert_closed(mesh)
    v = len(np.unique(mesh.triangles))
    e = len(edge_use_counts(mesh.triangles))
    f = len(mesh.triangles)
    assert v - e + f == 0


def test_volume_equals_area_times_thickness(rng):
    for _ in range(20):
        shape = random_tree(rng, 2)
        try:
            polys = extract_contours(shape, resolution=64)
        except EmptyShape:
            continue
        mesh = extrude(polys, 3.5, z0=1.25)
        assert_closed(mesh)
        assert mesh.volume() == pytest.approx(polys.area * 3.5, rel=1e-9)


def test_resolution_convergence():
    errors = {}
    for res in (64, 128, 256):
        errors[res] = abs(extract_contours(sdf.Circle(10), resolution=res).area - math.pi * 100)
    for r in (64, 128):
        assert errors[2 * r] <= 4 * errors[r]
        assert errors[2 * r] < errors[r]


def test_saddle_resolution_by_center_sample():
    # two disks touching diagonally across one cell: the cell center decides connectivity
    a = sdf.transform(sdf.RigidTransform2.translation(-1.0, -1.0), sdf.Circle(1.35))
    b = sdf.transform(sdf.RigidTransform2.translation(1.0, 1.0), sdf.Circle(1.35))
    # 0.375 mm cells; this box puts a cell centre exactly on the origin
    box = sdf.Aabb2((-3.1875, -3.1875), (2.8125, 2.8125))
    corners = np.array([[-0.1875, -0.1875], [0.1875, -0.1875], [0.1875, 0.1875], [-0.1875, 0.1875]])
    assert list(sdf.evaluate(sdf.union(a, b), corners) < 0) == [True, False, True, False]
    assert sdf.evaluate(sdf.union(a, b), (0.0, 0.0)) > 0
    separate = extract_contours(sdf.union(a, b), bbox=box, resolution=16)
    assert len(separate.contours) == 2
    bridge = sdf.union(a, b, sdf.Circle(0.3))
    joined = extract_contours(bridge, bbox=box, resolution=16)
    assert len(joined.contours) == 1


def test_triangulate_with_holes_covers_area():
    outer = np.array([[0, 0], [10, 0], [10, 10], [0, 10]], dtype=float)
    h1 = np.array([[2, 2], [2, 4], [4, 4], [4, 2]], dtype=float)
    h2 = np.array([[6, 6], [6, 8], [8, 8], [8, 6]], dtype=float)
    h3 = np.array([[6, 2], [6, 4], [8, 4], [8, 2]], dtype=float)
    coords, tris = triangulate(outer, [h1, h2, h3])
    areas = [0.5 * float(np.linalg.det(np.array([coords[b] - coords[a], coords[c] - coords[a]]))) for a, b, c in tris]
    assert min(areas) > 0
    assert sum(areas) == pytest.approx(100 - 12)


def test_boss_on_plate_is_watertight():
    bosses = [Boss((-5.0, 0.0), 2.0, 5.0), Boss((5.0, 0.0), 2.0, 5.0)]
    mesh = extrude(PolygonSet([SQUARE]), 4.0, bosses=bosses)
    assert_closed(mesh)
    assert mesh.vertices[:, 2].max() == pytest.approx(9.0)
    boss_area = sum(abs(signed_area(b.polygon())) for b in bosses)
    assert mesh.volume() == pytest.approx(400 * 4 + boss_area * 5, rel=1e-9)


def test_boss_crossing_contour_is_rejected():
    from mechforge.mesher import TriangulationFailure

    with pytest.raises(TriangulationFailure):
        extrude(PolygonSet([SQUARE]), 4.0, bosses=[Boss((9.0, 0.0), 2.0, 1.0)])


def test_random_shapes_are_watertight(rng):
    built = 0
    for _ in range(40):
        shape = random_tree(rng, 3)
        try:
            polys = extract_contours(shape, resolution=96)
        except EmptyShape:
            continue
        mesh = extrude(polys, 2.0)
        assert mesh.is_watertight()
        assert mesh.volume() > 0
        built += 1
    assert built > 20

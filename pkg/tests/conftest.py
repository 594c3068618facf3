from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from mechforge import sdf
from mechforge.emitters.manifest import AssemblyManifest, Feature, ManifestComponent
from mechforge.mechspec import ConnectionSpec, MechanismSpec, PartSpec

FIXTURES = Path(__file__).parent / "fixtures"


def random_primitive(rng: np.random.Generator) -> sdf.Sdf2:
    kind = rng.integers(5)
    if kind == 0:
        return sdf.Circle(rng.uniform(0.5, 10))
    if kind == 1:
        return sdf.Rectangle(rng.uniform(0.5, 15), rng.uniform(0.5, 15))
    if kind == 2:
        return sdf.Balk(rng.uniform(0.5, 20), rng.uniform(0.5, 6))
    if kind == 3:
        ri = rng.uniform(0.5, 6)
        return sdf.Ring(ri + rng.uniform(0.5, 5), ri)
    return sdf.Gear(rng.uniform(3, 12), int(rng.integers(4, 30)), rng.uniform(0.3, 3), rng.uniform(0.1, 0.9))


def random_transform(rng: np.random.Generator, span: float = 10.0) -> sdf.RigidTransform2:
    return sdf.RigidTransform2(rng.uniform(-math.pi, math.pi), rng.uniform(-span, span), rng.uniform(-span, span))


def random_tree(rng: np.random.Generator, depth: int = 3) -> sdf.Sdf2:
    if depth == 0 or rng.random() < 0.3:
        return random_primitive(rng)
    choice = rng.integers(4)
    if choice == 0:
        op = ("union", "intersection", "difference")[rng.integers(3)]
        n = int(rng.integers(2, 4))
        return sdf.Boolean(op, tuple(random_tree(rng, depth - 1) for _ in range(n)))
    if choice == 1:
        return sdf.transform(random_transform(rng), random_tree(rng, depth - 1))
    if choice == 2:
        return sdf.offset(rng.uniform(-1.0, 2.0), random_tree(rng, depth - 1))
    return random_primitive(rng)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def gripper_bytes() -> bytes:
    return (FIXTURES / "gripper.json").read_bytes()


def random_compilable_spec(rng: np.random.Generator, n_parts: int) -> MechanismSpec:
    """Small parts pinned on a 30 mm grid so assembled poses never collide.

    At most one part is left unconnected; it keeps the identity pose at the origin.
    """
    parts, conns = [], []
    cols = 4
    free = int(rng.integers(-1, n_parts))
    for i in range(n_parts):
        r = float(rng.uniform(8, 10))
        shape = sdf.Circle(r)
        if rng.random() < 0.5:
            shape = sdf.union(shape, sdf.transform(sdf.RigidTransform2.translation(r, 0), sdf.Balk(float(rng.uniform(2, 5)), 4.0)))
        pid = f"p{i:02d}"
        parts.append(PartSpec(pid, shape))
        if i != free:
            anchor = (float(rng.uniform(-0.5, 0.5)), float(rng.uniform(-0.5, 0.5)))
            conns.append(
                ConnectionSpec(
                    pid,
                    anchor,
                    (30.0 * (1 + i % cols), 30.0 * (i // cols)),
                    float(rng.uniform(1.0, 2.0)),
                    float(rng.uniform(-math.pi, math.pi)),
                )
            )
    return MechanismSpec(f"rand{n_parts}", float(rng.uniform(2, 5)), tuple(parts), tuple(conns))


def random_manifest(rng: np.random.Generator) -> AssemblyManifest:
    """BASE plus 0-9 parts with random poses, occasional hole/pin pairs and tied ranks."""
    n = int(rng.integers(0, 10))
    thickness = float(rng.uniform(1, 6))
    pin_h = thickness + 1.0
    ids = sorted({f"q{int(k)}" for k in rng.integers(0, 50, size=n)})
    base_feats: list[Feature] = []
    comps = []
    for i, cid in enumerate(ids):
        feats = []
        if rng.random() < 0.6:
            feats.append(Feature("hole", (0.0, 0.0), 2.3, thickness, ("BASE", len(base_feats))))
            base_feats.append(Feature("pin", (float(rng.uniform(-40, 40)), 0.0), 2.0, pin_h, (cid, 0)))
        feats.append(Feature("grasp_pin", (5.0, 0.0), 3.0, pin_h))
        comps.append(
            ManifestComponent(
                cid,
                random_transform(rng, 100),
                random_transform(rng, 50),
                thickness,
                int(rng.integers(1, 4)),
                tuple(feats),
            )
        )
    base_feats.append(Feature("grasp_pin", (0.0, 10.0), 3.0, pin_h))
    base = ManifestComponent("BASE", random_transform(rng, 100), sdf.RigidTransform2(), thickness, 0, tuple(base_feats))
    order = [base, *comps]
    rng.shuffle(order)
    return AssemblyManifest(tuple(order))


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)

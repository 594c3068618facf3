"""Assembly planning: steps, robot assignment and API-call expansion.

R1 moves the print surface between the drone and the assembly area; R2 detaches
parts from the surface and places them. A capability table decides which robot
takes each step; with a single manipulator every step goes to R1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping

from .emitters.manifest import AssemblyManifest, ManifestComponent
from .mechspec import BASE_ID, CellParams
from .sdf import RigidTransform2

Z_HOVER_MM = 20.0
NAMED_POSES = ("drone_pad", "assembly_area")

STEP_CAPABILITY = {
    "receive": "transport_surface",
    "detach": "detach",
    "place": "assemble",
    "return": "return_product",
}
TWO_ROBOTS: dict[str, frozenset[str]] = {
    "R1": frozenset({"transport_surface", "return_product"}),
    "R2": frozenset({"detach", "assemble"}),
}
ONE_ROBOT: dict[str, frozenset[str]] = {"R1": frozenset(STEP_CAPABILITY.values())}


class PlanError(ValueError):
    pass


class NoCapableRobot(PlanError):
    pass


class UnknownComponent(PlanError):
    pass


@dataclass(frozen=True)
class ApiCall:
    """One robot primitive. ``move_to`` targets either a manifest pose or a named cell pose at height ``z``."""

    op: str
    pose: tuple[float, float, float] | None = None  # (x mm, y mm, rotation rad)
    z: float | None = None
    named: str | None = None
    component: str | None = None

    OPS = ("move_to", "open_gripper", "close_gripper", "pick", "place", "detach")

    def __post_init__(self):
        if self.op not in self.OPS:
            raise PlanError(f"unknown api call {self.op!r}")

    def to_obj(self) -> dict:
        out: dict = {"op": self.op}
        if self.component is not None:
            out["component"] = self.component
        if self.named is not None:
            out["named"] = self.named
        if self.pose is not None:
            out["pose"] = {"x_mm": self.pose[0], "y_mm": self.pose[1], "rot_rad": self.pose[2]}
        if self.z is not None:
            out["z_mm"] = self.z
        return out

    @classmethod
    def from_obj(cls, obj: Mapping) -> ApiCall:
        pose = obj.get("pose")
        return cls(
            op=obj["op"],
            pose=None if pose is None else (float(pose["x_mm"]), float(pose["y_mm"]), float(pose["rot_rad"])),
            z=None if obj.get("z_mm") is None else float(obj["z_mm"]),
            named=obj.get("named"),
            component=obj.get("component"),
        )

    def __str__(self) -> str:
        if self.op != "move_to":
            return self.op
        where = self.named or f"({self.pose[0]:.2f}, {self.pose[1]:.2f}, {self.pose[2]:.3f} rad)"
        return f"move_to {where} z={self.z:.2f}"


@dataclass(frozen=True)
class Subtask:
    name: str
    api_calls: tuple[ApiCall, ...]


@dataclass(frozen=True)
class Step:
    kind: str
    robot: str
    description: str
    component: str | None = None
    subtasks: tuple[Subtask, ...] = ()

    @property
    def api_calls(self) -> list[ApiCall]:
        return [c for s in self.subtasks for c in s.api_calls]


@dataclass(frozen=True)
class AssemblyPlan:
    steps: tuple[Step, ...]

    def calls_by_robot(self) -> dict[str, list[ApiCall]]:
        out: dict[str, list[ApiCall]] = {}
        for step in self.steps:
            out.setdefault(step.robot, []).extend(step.api_calls)
        return out

    @property
    def robots(self) -> list[str]:
        return sorted({s.robot for s in self.steps})


def capability_table(cell: CellParams) -> dict[str, frozenset[str]]:
    if cell.num_manipulators == 1:
        return dict(ONE_ROBOT)
    if cell.num_manipulators == 2:
        return dict(TWO_ROBOTS)
    raise PlanError(f"unsupported number of manipulators: {cell.num_manipulators}")


def assign_step(kind: str, capabilities: Mapping[str, frozenset[str]]) -> str:
    """The capable robot for a step kind; ties (custom tables only) go to the smallest id."""
    needed = STEP_CAPABILITY.get(kind)
    capable = sorted(r for r, caps in capabilities.items() if needed is not None and needed in caps)
    if not capable:
        raise NoCapableRobot(f"no robot can perform a {kind!r} step")
    return capable[0]


def _pose(t: RigidTransform2) -> tuple[float, float, float]:
    return (float(t.tx), float(t.ty), float(t.rotation))


def _move(pose=None, z=0.0, named=None, component=None) -> ApiCall:
    return ApiCall("move_to", pose=pose, z=float(z), named=named, component=component)


_OPEN = ApiCall("open_gripper")
_CLOSE = ApiCall("close_gripper")


def _pin_height(manifest: AssemblyManifest) -> float:
    return max((f.height for c in manifest.components for f in c.features if f.kind == "pin"), default=0.0)


def _seat_z(manifest: AssemblyManifest, comp: ManifestComponent) -> float:
    if comp.id == BASE_ID:
        return 0.0
    try:
        return manifest.component(BASE_ID).thickness
    except KeyError:
        return 0.0


def expand_subtasks(step: Step, manifest: AssemblyManifest, z_hover: float = Z_HOVER_MM) -> tuple[Subtask, ...]:
    """Instantiate the fixed call template of a step against the manifest."""
    if step.kind in ("receive", "return"):
        src, dst = ("drone_pad", "assembly_area") if step.kind == "receive" else ("assembly_area", "drone_pad")
        return (
            Subtask("grasp surface", (_move(named=src, z=z_hover), _OPEN, _move(named=src), _CLOSE, _move(named=src, z=z_hover))),
            Subtask("carry surface", (_move(named=dst, z=z_hover), _move(named=dst))),
            Subtask("release surface", (_OPEN, _move(named=dst, z=z_hover), _CLOSE)),
        )
    try:
        comp = manifest.component(step.component)
    except KeyError:
        raise UnknownComponent(f"step refers to unknown component {step.component!r}") from None
    if step.kind == "detach":
        pose = _pose(comp.initial_pose)
        return (
            Subtask("approach", (_move(pose, z_hover, component=comp.id), _OPEN)),
            Subtask("grasp", (_move(pose, 0.0, component=comp.id), _CLOSE)),
            Subtask("lift", (_move(pose, z_hover, component=comp.id),)),
        )
    if step.kind == "place":
        pose = _pose(comp.final_pose)
        seat = _seat_z(manifest, comp)
        # a holed part must clear the pin tip with its whole thickness before descending onto it
        approach = seat + (_pin_height(manifest) + comp.thickness if comp.has_hole() else z_hover)
        return (
            Subtask("approach", (_move(pose, approach, component=comp.id),)),
            Subtask("seat", (_move(pose, seat, component=comp.id), _OPEN)),
            Subtask("retreat", (_move(pose, seat + z_hover, component=comp.id), _CLOSE)),
        )
    raise PlanError(f"unknown step kind {step.kind!r}")


def precedence_order(manifest: AssemblyManifest) -> list[ManifestComponent]:
    comps = list(manifest.components)
    if not comps:
        raise PlanError("manifest has no components")
    ids = [c.id for c in comps]
    if len(set(ids)) != len(ids):
        raise PlanError("duplicate component ids in manifest")
    if any(not isinstance(c.precedence_rank, int) or c.precedence_rank < 0 for c in comps):
        raise PlanError("precedence ranks must be non-negative integers")
    base = [c for c in comps if c.id == BASE_ID]
    if not base:
        raise PlanError("manifest has no BASE component")
    if any(c.precedence_rank <= base[0].precedence_rank for c in comps if c.id != BASE_ID):
        raise PlanError("BASE must precede every other component")
    return sorted(comps, key=lambda c: (c.precedence_rank, c.id))


def plan_workflow(manifest: AssemblyManifest, cell: CellParams | None = None) -> AssemblyPlan:
    cell = cell or CellParams()
    table = capability_table(cell)
    order = precedence_order(manifest)
    skeleton = [("receive", None, "receive print surface from drone and carry it to the assembly area")]
    for c in order:
        skeleton.append(("detach", c.id, f"detach {c.id} from the print surface"))
        skeleton.append(("place", c.id, f"place {c.id} at its assembled pose"))
    skeleton.append(("return", None, "return the assembled product to the drone"))
    steps = []
    for kind, cid, text in skeleton:
        draft = Step(kind, assign_step(kind, table), text, cid)
        steps.append(Step(kind, draft.robot, text, cid, expand_subtasks(draft, manifest)))
    return AssemblyPlan(tuple(steps))


def plan_to_obj(plan: AssemblyPlan) -> dict:
    return {
        "steps": [
            {
                "kind": s.kind,
                "robot": s.robot,
                "description": s.description,
                "component": s.component,
                "subtasks": [{"name": t.name, "api_calls": [c.to_obj() for c in t.api_calls]} for t in s.subtasks],
            }
            for s in plan.steps
        ]
    }


def serialize_plan(plan: AssemblyPlan) -> bytes:
    return (json.dumps(plan_to_obj(plan), sort_keys=True, indent=2, allow_nan=False) + "\n").encode("utf-8")


def parse_plan(data: bytes | str) -> AssemblyPlan:
    try:
        obj = json.loads(data)
        steps = tuple(
            Step(
                kind=s["kind"],
                robot=s["robot"],
                description=s["description"],
                component=s.get("component"),
                subtasks=tuple(
                    Subtask(t["name"], tuple(ApiCall.from_obj(c) for c in t["api_calls"])) for t in s["subtasks"]
                ),
            )
            for s in obj["steps"]
        )
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        if isinstance(exc, PlanError):
            raise
        raise PlanError(f"malformed plan document: {exc}") from None
    for s in steps:
        if s.kind not in STEP_CAPABILITY:
            raise PlanError(f"unknown step kind {s.kind!r}")
    return AssemblyPlan(steps)


def format_plan(plan: AssemblyPlan) -> str:
    """Numbered human-readable listing, one line per step and one indented line per API call."""
    lines = []
    for i, s in enumerate(plan.steps, start=1):
        lines.append(f"{i:2d}. [{s.robot}] {s.description}")
        for t in s.subtasks:
            lines.append(f"      {t.name}: " + "; ".join(str(c) for c in t.api_calls))
    return "\n".join(lines) + "\n"

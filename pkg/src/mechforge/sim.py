"""Discrete-event model of the production line: printer, transfer arm, drone and assembly robots.

Every activity is a task on one resource with a fixed duration and a set of
predecessor tasks. Tasks are released in plan order and start as soon as their
resource is free and all predecessors have finished.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Mapping

from .mechspec import BASE_ID, CellParams
from .planner import AssemblyPlan

STAGES = ("blueprint", "print", "delivery", "assembly")
STAGE_LABELS = {"blueprint": "Design", "print": "Print", "delivery": "Delivery", "assembly": "Assembly"}


class ResourceConflict(RuntimeError):
    """Two events overlapped on one resource. Indicates a bug in the scheduler."""


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Topology:
    printer_pad: tuple[float, float, float] = (0.0, 0.0, 0.0)  # m
    assembly_pad: tuple[float, float, float] = (3.0, 4.0, 0.0)  # m
    drone_speed: float = 2.0  # m/s
    takeoff_s: float = 10.0
    landing_s: float = 10.0
    surface_transfer_s: float = 45.0
    per_api_call_s: float = 3.0
    heatup_min: float = 5.0
    blueprint_s: float = 30.0

    def __post_init__(self):
        for name in ("printer_pad", "assembly_pad"):
            pad = getattr(self, name)
            if len(pad) != 3 or not all(math.isfinite(v) for v in pad):
                raise TopologyError(f"{name} must be three finite coordinates")
        if not (math.isfinite(self.drone_speed) and self.drone_speed > 0):
            raise TopologyError("drone_speed must be > 0")
        for name in ("takeoff_s", "landing_s", "surface_transfer_s", "per_api_call_s", "heatup_min", "blueprint_s"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise TopologyError(f"{name} must be >= 0")

    @property
    def flight_distance_m(self) -> float:
        return math.dist(self.printer_pad, self.assembly_pad)

    @property
    def flight_s(self) -> float:
        return self.flight_distance_m / self.drone_speed + self.takeoff_s + self.landing_s

    @classmethod
    def zero(cls) -> Topology:
        return cls((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def topology_from_obj(obj: Mapping) -> Topology:
    if not isinstance(obj, Mapping):
        raise TopologyError("topology must be a JSON object")
    known = {f.name for f in fields(Topology)}
    unknown = sorted(set(obj) - known)
    if unknown:
        raise TopologyError(f"unknown topology key {unknown[0]!r}")
    kwargs = {}
    for key, value in obj.items():
        if key.endswith("_pad"):
            if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
                raise TopologyError(f"{key} must be an array of three numbers")
            kwargs[key] = tuple(float(v) for v in value)
        else:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise TopologyError(f"{key} must be a number")
            kwargs[key] = float(value)
    return Topology(**kwargs)


def load_topology(data: bytes | str) -> Topology:
    try:
        obj = json.loads(data)
    except (ValueError, RecursionError) as exc:
        raise TopologyError(f"topology is not valid JSON: {exc}") from None
    return topology_from_obj(obj)


def serialize_topology(topo: Topology) -> bytes:
    obj = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(topo).items()}
    return (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode("utf-8")


@dataclass(frozen=True)
class Event:
    t_start: float
    t_end: float
    resource: str
    activity: str
    stage: str
    call: tuple[int, int] | None = None  # (step index, call index within step)


@dataclass(frozen=True)
class SimTimeline:
    events: tuple[Event, ...]
    stage_durations: dict[str, float]
    makespan_s: float

    def by_resource(self) -> dict[str, list[Event]]:
        out: dict[str, list[Event]] = {}
        for e in self.events:
            out.setdefault(e.resource, []).append(e)
        for evs in out.values():
            evs.sort(key=lambda e: (e.t_start, e.t_end))
        return out


@dataclass
class _Task:
    key: int
    resource: str
    duration: float
    activity: str
    stage: str
    deps: tuple[int, ...]
    call: tuple[int, int] | None = None


def _schedule(tasks: list[_Task]) -> list[Event]:
    """Event loop: a task starts when its resource is idle and its predecessors are done.

    Tasks on one resource run in release order, so the result is deterministic.
    """
    done: dict[int, float] = {}
    queues: dict[str, list[_Task]] = {}
    for t in tasks:
        queues.setdefault(t.resource, []).append(t)
    heads = {r: 0 for r in queues}
    free_at = {r: 0.0 for r in queues}
    events: list[Event] = []
    # (time, sequence, resource) wake-ups; sequence keeps pops stable
    wake: list[tuple[float, int, str]] = [(0.0, i, r) for i, r in enumerate(sorted(queues))]
    heapq.heapify(wake)
    seq = len(wake)
    while wake:
        now, _, r = heapq.heappop(wake)
        if heads[r] >= len(queues[r]) or now < free_at[r]:
            continue
        task = queues[r][heads[r]]
        if not all(d in done for d in task.deps):
            continue  # woken again when a predecessor finishes
        start = max(now, free_at[r], max((done[d] for d in task.deps), default=0.0))
        end = start + task.duration
        events.append(Event(start, end, r, task.activity, task.stage, task.call))
        done[task.key] = end
        free_at[r] = end
        heads[r] += 1
        for other in sorted(queues):
            if heads[other] < len(queues[other]):
                heapq.heappush(wake, (max(end, free_at[other]), seq, other))
                seq += 1
    if len(done) != len(tasks):
        raise ResourceConflict("dependency cycle or unsatisfiable precedence in task graph")
    return events


def _check_exclusive(events: list[Event]) -> None:
    per: dict[str, list[Event]] = {}
    for e in events:
        per.setdefault(e.resource, []).append(e)
    for r, evs in per.items():
        evs.sort(key=lambda e: (e.t_start, e.t_end))
        for a, b in zip(evs, evs[1:]):
            if a.t_end > b.t_start + 1e-9:
                raise ResourceConflict(f"{r}: {a.activity!r} overlaps {b.activity!r}")


def simulate(
    plan: AssemblyPlan,
    print_time_min: float,
    topology: Topology | None = None,
    cell: CellParams | None = None,
) -> SimTimeline:
    topo = topology or Topology()
    cell = cell or CellParams()
    if not (math.isfinite(print_time_min) and print_time_min >= 0):
        raise ValueError("print time must be a finite non-negative number of minutes")
    robots = plan.robots
    if len(robots) > cell.num_manipulators:
        raise ValueError(f"plan uses {len(robots)} robots but the cell has {cell.num_manipulators}")

    tasks: list[_Task] = []

    def add(resource, duration, activity, stage, deps=(), call=None) -> int:
        tasks.append(_Task(len(tasks), resource, float(duration), activity, stage, tuple(deps), call))
        return len(tasks) - 1

    t_bp = add("designer", topo.blueprint_s, "blueprint generation", "blueprint")
    t_pr = add("printer", print_time_min * 60.0, "print plate", "print", [t_bp])
    t_tr = add("transfer_arm", topo.surface_transfer_s, "transfer surface to drone", "print", [t_pr])
    t_up = add("drone", topo.takeoff_s, "takeoff", "delivery", [t_tr])
    t_fl = add("drone", topo.flight_distance_m / topo.drone_speed, "flight to assembly cell", "delivery", [t_up])
    t_ld = add("drone", topo.landing_s, "landing", "delivery", [t_fl])

    step_end: dict[int, int] = {}
    receive_end = None
    detach_end: dict[str, int] = {}
    place_end: dict[str, int] = {}
    for i, step in enumerate(plan.steps):
        if step.kind == "receive":
            deps = [t_ld]
        elif step.kind == "detach":
            deps = [receive_end if receive_end is not None else t_ld]
        elif step.kind == "place":
            deps = [detach_end[step.component]] if step.component in detach_end else [t_ld]
            if step.component != BASE_ID and BASE_ID in place_end:
                deps.append(place_end[BASE_ID])
        else:  # return
            deps = list(place_end.values()) or [t_ld]
        calls = step.api_calls
        last = None
        if not calls:
            last = add(step.robot, 0.0, f"{step.kind} {step.component or ''}".strip(), "assembly", deps)
        for j, call in enumerate(calls):
            label = f"{step.kind} {step.component or 'surface'}: {call.op}"
            last = add(step.robot, topo.per_api_call_s, label, "assembly", deps if j == 0 else [last], (i, j))
        step_end[i] = last
        if step.kind == "receive":
            receive_end = last
        elif step.kind == "detach":
            detach_end[step.component] = last
        elif step.kind == "place":
            place_end[step.component] = last

    events = _schedule(tasks)
    _check_exclusive(events)
    events.sort(key=lambda e: (e.t_start, e.t_end, e.resource, e.activity))

    def span(stage: str) -> float:
        evs = [e for e in events if e.stage == stage]
        return max(e.t_end for e in evs) - min(e.t_start for e in evs) if evs else 0.0

    durations = {s: span(s) for s in STAGES}
    makespan = max((e.t_end for e in events), default=0.0)
    return SimTimeline(tuple(events), durations, makespan)


def timeline_to_obj(tl: SimTimeline) -> dict:
    return {
        "makespan_s": tl.makespan_s,
        "stage_durations_s": {k: tl.stage_durations[k] for k in STAGES},
        "events": [
            {
                "t_start_s": e.t_start,
                "t_end_s": e.t_end,
                "resource": e.resource,
                "activity": e.activity,
                "stage": e.stage,
                "call": None if e.call is None else list(e.call),
            }
            for e in tl.events
        ],
    }


def serialize_timeline(tl: SimTimeline) -> bytes:
    return (json.dumps(timeline_to_obj(tl), sort_keys=True, indent=2, allow_nan=False) + "\n").encode("utf-8")


def report_rows(stage_minutes: Mapping[str, float], makespan_min: float) -> str:
    lines = [f"{'Stage':<10}{'Minutes':>10}", "-" * 20]
    for s in STAGES:
        lines.append(f"{STAGE_LABELS[s]:<10}{stage_minutes[s]:>10.2f}")
    lines.append("-" * 20)
    lines.append(f"{'Total':<10}{makespan_min:>10.2f}")
    return "\n".join(lines) + "\n"


def report(tl: SimTimeline) -> str:
    """Fixed-width stage table in minutes, two decimals, then the makespan."""
    return report_rows({s: tl.stage_durations[s] / 60.0 for s in STAGES}, tl.makespan_s / 60.0)

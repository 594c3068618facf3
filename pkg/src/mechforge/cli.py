"""Command-line front end: compile, plan, simulate, generate and bench.

Every command stages its outputs in a temporary directory next to the output
directory and moves them into place only after all of them were produced, so a
failing run leaves nothing behind.

Exit codes: 0 ok, 2 unreadable or unparsable input, 3 compile/plan failure,
4 meshing failure, 5 emitter failure, 6 model unavailable, 64 usage error.
"""

from __future__ import annotations

import argparse
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .compiler import DEFAULT_CLEARANCE, CompileError, build_manifest, compile_assembly
from .emitters.gcode import ParseError, PrintParams, estimate_print_time, jobs_from_assembly, slice_gcode
from .emitters.manifest import SchemaError, read_manifest, write_manifest
from .emitters.stl import write_stl
from .generation import (
    GenerationError,
    LiveClient,
    ReplayClient,
    analyze,
    default_context,
    find_recorded,
    format_benchmark,
    format_table,
    generate_spec,
    reference_table,
    run_benchmark,
)
from .mechspec import CellParams, SpecError, parse_spec
from .mesher import DEFAULT_RESOLUTION, MeshError, TriMesh, mesh_component, part_layers
from .planner import PlanError, format_plan, parse_plan, plan_workflow, serialize_plan
from .sim import STAGE_LABELS, STAGES, Topology, TopologyError, load_topology, report, serialize_timeline, simulate

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_COMPILE = 3
EXIT_MESH = 4
EXIT_EMIT = 5
EXIT_MODEL = 6
EXIT_USAGE = 64


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class RunConfig:
    output: Path
    clearance: float = DEFAULT_CLEARANCE
    resolution: int = DEFAULT_RESOLUTION
    print_params: PrintParams = field(default_factory=PrintParams)
    cell: CellParams = field(default_factory=CellParams)
    topology: Path | None = None
    offline: bool = True


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read(path: Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise CliError(EXIT_PARSE, f"cannot read {path}: {exc.strerror or exc}") from None


def _publish(out_dir: Path, files: dict[str, bytes]) -> list[Path]:
    """Write ``files`` to a staging directory, then move them into ``out_dir`` together."""
    out_dir = Path(out_dir)
    parent = out_dir.resolve().parent
    parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".mechforge-", dir=parent))
    try:
        for name, data in files.items():
            (stage / name).write_bytes(data)
        if not out_dir.exists():
            os.rename(stage, out_dir)
        else:
            for name in files:
                os.replace(stage / name, out_dir / name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    return [out_dir / name for name in files]


def _emit_listing(paths: list[Path], extra: list[tuple[str, str]] = ()) -> None:
    for p in paths:
        print(f"file\t{p}\t{p.stat().st_size}")
    for k, v in extra:
        print(f"{k}\t{v}")


# ---------------------------------------------------------------------------
# compile


def compile_outputs(document: bytes, cfg: RunConfig) -> tuple[dict[str, bytes], float]:
    """All compile artefacts keyed by file name, plus the plate print-time estimate in minutes."""
    from .plotting import render_preview

    try:
        spec = parse_spec(document)
    except SpecError as exc:
        raise CliError(EXIT_PARSE, f"spec error: {exc}") from None
    try:
        asm = compile_assembly(spec, cfg.cell, cfg.clearance)
    except SpecError as exc:
        raise CliError(EXIT_PARSE, f"spec error: {exc}") from None
    except (CompileError, ValueError) as exc:
        raise CliError(EXIT_COMPILE, f"compile error: {type(exc).__name__}: {exc}") from None

    files: dict[str, bytes] = {}
    try:
        local = {p.id: mesh_component(p, cfg.resolution, pose=None) for p in asm.components}
        contours = {p.id: part_layers(p, cfg.resolution)[0] for p in asm.components}
    except MeshError as exc:
        raise CliError(EXIT_MESH, f"mesh error: {type(exc).__name__}: {exc}") from None
    base_top = asm.base.thickness
    plate = TriMesh.concatenate(local[p.id].transformed(p.initial_pose) for p in asm.components)
    assembled = TriMesh.concatenate(
        local[p.id].transformed(p.final_pose, 0.0 if p is asm.base else base_top) for p in asm.components
    )
    try:
        for p in asm.components:
            files[f"part_{p.id}.stl"] = write_stl(local[p.id])
        files["plate.stl"] = write_stl(plate)
        files["assembly.stl"] = write_stl(assembled)
        gcode = slice_gcode(jobs_from_assembly(asm, cfg.resolution), cfg.print_params)
        files["plate.gcode"] = gcode.encode("ascii")
        files["manifest.json"] = write_manifest(build_manifest(asm))
        files["preview.svg"] = render_preview(asm.components, contours, asm.bed)
    except (ValueError, OSError) as exc:
        raise CliError(EXIT_EMIT, f"emit error: {type(exc).__name__}: {exc}") from None
    return files, estimate_print_time(gcode)


def _config(args) -> RunConfig:
    try:
        params = PrintParams(
            layer_height=args.layer_height,
            perimeters=args.perimeters,
            infill_density=args.infill,
            bed=(args.bed_width, args.bed_depth),
        )
        cell = CellParams(args.robots, args.bed_width, args.bed_depth, args.part_spacing)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, f"invalid option: {exc}") from None
    if not (args.clearance >= 0 and args.resolution >= 8):
        raise CliError(EXIT_USAGE, "invalid option: clearance must be >= 0 and resolution >= 8")
    return RunConfig(Path(args.output), args.clearance, args.resolution, params, cell)


def cmd_compile(args) -> int:
    cfg = _config(args)
    files, minutes = compile_outputs(_read(args.spec), cfg)
    _emit_listing(_publish(cfg.output, files), [("print_time_min", f"{minutes:.2f}")])
    return EXIT_OK


# ---------------------------------------------------------------------------
# plan / simulate


def cmd_plan(args) -> int:
    try:
        manifest = read_manifest(_read(args.manifest))
    except SchemaError as exc:
        raise CliError(EXIT_PARSE, f"manifest error: {exc}") from None
    try:
        plan = plan_workflow(manifest, CellParams(num_manipulators=args.robots))
    except PlanError as exc:
        raise CliError(EXIT_COMPILE, f"plan error: {type(exc).__name__}: {exc}") from None
    listing = format_plan(plan)
    paths = _publish(Path(args.output), {"plan.json": serialize_plan(plan), "plan.txt": listing.encode("utf-8")})
    sys.stdout.write(listing)
    _emit_listing(paths)
    return EXIT_OK


def stage_csv(tl) -> str:
    rows = ["stage,minutes"] + [f"{STAGE_LABELS[s]},{tl.stage_durations[s] / 60.0:.2f}" for s in STAGES]
    rows.append(f"Total,{tl.makespan_s / 60.0:.2f}")
    return "\n".join(rows) + "\n"


def cmd_simulate(args) -> int:
    from .plotting import render_stage_chart

    try:
        plan = parse_plan(_read(args.plan))
    except PlanError as exc:
        raise CliError(EXIT_PARSE, f"plan error: {exc}") from None
    gcode = _read(args.gcode).decode("ascii", errors="replace")
    try:
        topo = load_topology(_read(args.topology)) if args.topology else Topology()
    except TopologyError as exc:
        raise CliError(EXIT_PARSE, f"topology error: {exc}") from None
    try:
        minutes = estimate_print_time(gcode, topo.heatup_min)
    except ParseError as exc:
        raise CliError(EXIT_PARSE, f"gcode error: {exc}") from None
    try:
        tl = simulate(plan, minutes, topo, CellParams(num_manipulators=max(1, len(plan.robots))))
    except ValueError as exc:
        raise CliError(EXIT_COMPILE, f"simulation error: {exc}") from None
    table = report(tl)
    files = {
        "timeline.json": serialize_timeline(tl),
        "report.txt": table.encode("utf-8"),
        "stages.csv": stage_csv(tl).encode("utf-8"),
        "stages.svg": render_stage_chart(tl),
    }
    paths = _publish(Path(args.output), files)
    sys.stdout.write(table)
    _emit_listing(paths)
    return EXIT_OK


# ---------------------------------------------------------------------------
# generate / bench


def cmd_generate(args) -> int:
    prompt = sys.stdin.read() if args.prompt == "-" else args.prompt
    if not prompt.strip():
        raise CliError(EXIT_USAGE, "prompt must be non-empty")
    try:
        if args.live:
            client = LiveClient.from_env()
        else:
            recorded = find_recorded(prompt, Path(args.fixtures) if args.fixtures else None)
            if recorded is None:
                raise CliError(
                    EXIT_MODEL,
                    "offline mode: no recorded response matches this prompt; rerun with --live and "
                    "MODEL_ENDPOINT, MODEL_NAME, MODEL_API_KEY set to query a model",
                )
            client = ReplayClient.from_fixture(recorded)
        ctx = default_context()
        analysis = analyze(prompt, ctx, client)
        document = generate_spec(analysis, ctx, client)
    except GenerationError as exc:
        raise CliError(EXIT_MODEL, f"generation error: {exc}") from None
    cfg = _config(args)
    files, minutes = compile_outputs(document, cfg)
    files = {"analysis.txt": analysis.encode("utf-8"), "spec.json": document, **files}
    _emit_listing(_publish(cfg.output, files), [("print_time_min", f"{minutes:.2f}")])
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        rows = run_benchmark(Path(args.fixtures) if args.fixtures else None, args.resolution)
    except GenerationError as exc:
        raise CliError(EXIT_PARSE, f"fixture error: {exc}") from None
    sys.stdout.write(format_benchmark(rows))
    if args.reference:
        sys.stdout.write("\nPublished scores (reference only, not reproduced offline):\n")
        sys.stdout.write(format_table(reference_table()))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_compile_flags(p: argparse.ArgumentParser) -> None:
    defaults = PrintParams()
    cell = CellParams()
    p.add_argument("-o", "--output", required=True, help="output directory (created or updated atomically)")
    p.add_argument("--clearance", type=float, default=DEFAULT_CLEARANCE, help="hole clearance in mm (default %(default)s)")
    p.add_argument("--resolution", type=int, default=DEFAULT_RESOLUTION, help="contour grid cells along the longer side (default %(default)s)")
    p.add_argument("--layer-height", type=float, default=defaults.layer_height, help="slice layer height in mm (default %(default)s)")
    p.add_argument("--perimeters", type=int, default=defaults.perimeters, help="perimeter loops per layer (default %(default)s)")
    p.add_argument("--infill", type=float, default=defaults.infill_density, help="infill density in [0, 1] (default %(default)s)")
    p.add_argument("--bed-width", type=float, default=cell.bed_width, help="print bed width in mm (default %(default)s)")
    p.add_argument("--bed-depth", type=float, default=cell.bed_depth, help="print bed depth in mm (default %(default)s)")
    p.add_argument("--part-spacing", type=float, default=cell.part_spacing, help="minimum gap between parts in mm (default %(default)s)")
    p.add_argument("--robots", type=int, choices=(1, 2), default=cell.num_manipulators, help="assembly robots in the cell")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mechforge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("compile", help="mechanism document -> STL, G-code, manifest, preview")
    p.add_argument("spec", help="mechanism JSON document")
    _add_compile_flags(p)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("plan", help="assembly manifest -> robot plan")
    p.add_argument("manifest", help="manifest.json written by compile")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--robots", type=int, choices=(1, 2), default=2, help="assembly robots (default %(default)s)")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="plan + G-code -> production timeline and stage report")
    p.add_argument("plan", help="plan.json written by plan")
    p.add_argument("gcode", help="plate.gcode written by compile")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--topology", help="JSON file overriding line topology constants")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("generate", help="text prompt -> mechanism document -> compile outputs")
    p.add_argument("prompt", help="description of the mechanism, or - to read stdin")
    p.add_argument("--live", action="store_true", help="query the configured model instead of recorded responses")
    p.add_argument("--fixtures", help="recorded-response directory (default: shipped fixtures)")
    _add_compile_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("bench", help="score recorded model outputs in the benchmark table layout")
    p.add_argument("fixtures", nargs="?", help="fixture root <model>/<mechanism>/ (default: shipped set)")
    p.add_argument("--resolution", type=int, default=96, help="meshing resolution for scoring (default %(default)s)")
    p.add_argument("--reference", action="store_true", help="also print the published scores")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"mechforge: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())

"""Generative-model adapter for the blueprint stage, with offline replay and a scoring harness.

Two model calls turn a prompt into a mechanism document: ``analyze`` enriches
the prompt into a part/primitive/connection description, ``generate_spec``
turns that into a JSON document. Offline, a :class:`ReplayClient` serves
recorded responses; :class:`LiveClient` talks to a chat-completion endpoint and
is only ever constructed on explicit request.

Benchmark fixtures live in ``<root>/<model>/<mechanism>/`` with
``prompt.txt``, ``analysis.txt`` and ``spec.json``.
"""

from __future__ import annotations

import csv
import json
import os
import re
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Protocol

import numpy as np

from .compiler import build_manifest, compile_assembly
from .emitters.stl import write_stl
from .mechspec import PRIMITIVE_PARAMS, SpecError, parse_spec
from .mesher import mesh_component

FIXTURE_FILES = ("prompt.txt", "analysis.txt", "spec.json")
SCORE_RESOLUTION = 96

# analysis rubric: the text must name parts, a catalog primitive and a connection
PART_WORDS = ("part", "parts", "component", "components", "base")
PRIMITIVE_WORDS = {
    "circle": ("circle", "circular", "disc", "disk"),
    "rect": ("rect", "rectangle", "rectangular", "plate"),
    "balk": ("balk", "beam", "bar"),
    "ring": ("ring", "annulus"),
    "gear": ("gear", "gears", "toothed"),
}
CONNECTION_WORDS = ("pin", "pins", "hole", "holes", "joint", "pivot", "hinge", "axle", "connection", "connected")

PRIMITIVE_DOCS = {
    "circle": "disk of the given radius centred on the origin",
    "rect": "axis-aligned rectangle of width x height centred on the origin",
    "balk": "bar with rounded ends: length between end-cap centres, width = cap diameter",
    "ring": "annulus between inner_radius and outer_radius",
    "gear": "pitch disk with teeth trapezoidal teeth of radial tooth_depth; tooth_width_ratio is the root share of each pitch",
}

RULES = """\
Build a single-layer planar mechanism from the listed primitives.
Every part is a CSG tree of primitives combined with union, intersection, difference,
rigid transforms and offsets. Parts move only about pins standing on an automatically
generated base: each connection names the moving part, the anchor point in the part's
own frame, the anchor point in the assembled frame, the pin radius and the assembled
rotation. Anchors must lie inside their part with room for the hole plus a 0.5 mm wall.
Parts must not overlap once assembled. Use millimetres and radians. Reply with one
fenced JSON block holding the mechanism document.
"""


class GenerationError(RuntimeError):
    pass


class ModelUnavailable(GenerationError):
    pass


class NoDocumentFound(GenerationError):
    pass


class MissingFixture(GenerationError):
    pass


class ModelClient(Protocol):
    def complete(self, stage: str, system: str, prompt: str) -> str: ...


@dataclass(frozen=True)
class GenerationContext:
    primitive_catalog: dict[str, str] = field(default_factory=lambda: dict(PRIMITIVE_DOCS))
    rules: str = RULES
    examples: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        missing = set(PRIMITIVE_PARAMS) - set(self.primitive_catalog)
        if missing:
            raise ValueError(f"primitive catalog lacks {sorted(missing)}")

    def system_prompt(self) -> str:
        lines = ["Primitives:"]
        for name in sorted(self.primitive_catalog):
            params = ", ".join(PRIMITIVE_PARAMS[name][1])
            lines.append(f"- {name}({params}): {self.primitive_catalog[name]}")
        lines += ["", "Rules:", self.rules.strip()]
        for desc, doc in self.examples:
            lines += ["", f"Example: {desc}", "```json", doc.strip(), "```"]
        return "\n".join(lines) + "\n"


def default_context() -> GenerationContext:
    root = fixtures_root() / "perfect" / "gripper"
    try:
        example = ((root / "prompt.txt").read_text("utf-8").strip(), (root / "spec.json").read_text("utf-8"))
    except OSError:
        return GenerationContext()
    return GenerationContext(examples=(example,))


@dataclass
class ReplayClient:
    """Serves recorded responses; anything unrecorded is an offline-mode error."""

    analysis: str | None = None
    document: str | None = None
    calls: list[str] = field(default_factory=list)

    @classmethod
    def from_fixture(cls, directory: Path) -> ReplayClient:
        return cls((directory / "analysis.txt").read_text("utf-8"), (directory / "spec.json").read_text("utf-8"))

    def complete(self, stage: str, system: str, prompt: str) -> str:
        self.calls.append(stage)
        if stage == "analysis" and self.analysis is not None:
            return self.analysis
        if stage == "spec" and self.document is not None:
            return self.document if "```" in self.document else f"```json\n{self.document.rstrip()}\n```\n"
        raise ModelUnavailable(f"offline mode: no recorded {stage} response (use --live to query a model)")


@dataclass
class LiveClient:
    """Chat-completion client; reads MODEL_ENDPOINT, MODEL_NAME and MODEL_API_KEY."""

    endpoint: str
    model: str
    api_key: str
    timeout_s: float = 120.0

    @classmethod
    def from_env(cls, env: dict[str, str] | None = None) -> LiveClient:
        env = os.environ if env is None else env
        missing = [k for k in ("MODEL_ENDPOINT", "MODEL_NAME", "MODEL_API_KEY") if not env.get(k)]
        if missing:
            raise ModelUnavailable(f"live mode needs {', '.join(missing)} in the environment")
        return cls(env["MODEL_ENDPOINT"], env["MODEL_NAME"], env["MODEL_API_KEY"])

    def complete(self, stage: str, system: str, prompt: str) -> str:
        body = json.dumps(
            {"model": self.model, "messages": [{"role": "system", "content": system}, {"role": "user", "content": prompt}]}
        ).encode("utf-8")
        req = urllib.request.Request(
            self.endpoint,
            data=body,
            headers={"Content-Type": "application/json", "Authorization": f"Bearer {self.api_key}"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
            return payload["choices"][0]["message"]["content"]
        except (urllib.error.URLError, OSError, ValueError, KeyError, IndexError, TypeError) as exc:
            raise ModelUnavailable(f"model call failed: {exc}") from None


def analyze(prompt: str, ctx: GenerationContext, model: ModelClient) -> str:
    if not prompt or not prompt.strip():
        raise ValueError("prompt must be non-empty")
    return model.complete("analysis", ctx.system_prompt(), prompt)


_FENCE = re.compile(r"```[^\n`]*\n(.*?)```", re.S)


def extract_document(text: str) -> bytes:
    """First fenced block holding a JSON object; a bare JSON object reply is accepted too."""
    candidates = _FENCE.findall(text) or [text]
    for block in candidates:
        try:
            if isinstance(json.loads(block), dict):
                return (block.strip() + "\n").encode("utf-8")
        except (ValueError, RecursionError):
            continue
    raise NoDocumentFound("model output contains no JSON object block")


def generate_spec(analysis: str, ctx: GenerationContext, model: ModelClient) -> bytes:
    if not analysis or not analysis.strip():
        raise ValueError("analysis must be non-empty")
    return extract_document(model.complete("spec", ctx.system_prompt(), analysis))


@dataclass(frozen=True)
class Scores:
    analysis: int
    executable: int
    stl: int

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.analysis, self.executable, self.stl)


def _has_word(text: str, words) -> bool:
    return any(re.search(rf"\b{re.escape(w)}\b", text) for w in words)


def score_analysis(text: str) -> int:
    low = text.lower()
    prims = any(_has_word(low, words) for words in PRIMITIVE_WORDS.values())
    return int(_has_word(low, PART_WORDS) and prims and _has_word(low, CONNECTION_WORDS))


def _assembly_ok(spec, resolution: int) -> bool:
    try:
        asm = compile_assembly(spec)
        for part in asm.components:
            mesh = mesh_component(part, resolution=resolution)
            if not mesh.is_watertight() or len(write_stl(mesh)) != 84 + 50 * len(mesh.triangles):
                return False
        build_manifest(asm)
    except Exception:  # any pipeline failure scores zero
        return False
    for _, pin in asm.base.features_of("pin"):
        part = asm.component(pin.mate[0])
        hole = part.features[pin.mate[1]]
        err = np.hypot(*(asm.base.final_pose.apply(pin.local_center) - part.final_pose.apply(hole.local_center)))
        if not err <= 1e-9:
            return False
    return True


def score_record(prompt: str, analysis: str, document: bytes, resolution: int = SCORE_RESOLUTION) -> Scores:
    try:
        spec = parse_spec(document)
    except SpecError:
        return Scores(score_analysis(analysis), 0, 0)
    return Scores(score_analysis(analysis), 1, int(_assembly_ok(spec, resolution)))


@dataclass(frozen=True)
class Record:
    model: str
    mechanism: str
    prompt: str
    analysis: str
    document: bytes
    scores: Scores


@dataclass(frozen=True)
class BenchmarkRow:
    model: str
    analysis: int
    executable: int
    stl: int
    records: tuple[Record, ...]


def fixtures_root() -> Path:
    return Path(str(resources.files("mechforge") / "data" / "fixtures"))


def load_records(root: Path, model: str, mechanisms: list[str]) -> list[tuple[str, str, str, bytes]]:
    out = []
    for mech in mechanisms:
        d = root / model / mech
        missing = [f for f in FIXTURE_FILES if not (d / f).is_file()]
        if missing:
            raise MissingFixture(f"{model}/{mech} lacks {', '.join(missing)}")
        out.append((mech, (d / "prompt.txt").read_text("utf-8"), (d / "analysis.txt").read_text("utf-8"), (d / "spec.json").read_bytes()))
    return out


def run_benchmark(root: Path | None = None, resolution: int = SCORE_RESOLUTION) -> list[BenchmarkRow]:
    """Score every recorded (model, mechanism) triple; rows and records in directory name order."""
    root = Path(root) if root is not None else fixtures_root()
    if not root.is_dir():
        raise MissingFixture(f"fixture directory {root} does not exist")
    models = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not models:
        raise MissingFixture(f"no model directories under {root}")
    mechanisms = sorted({m.name for model in models for m in (root / model).iterdir() if m.is_dir()})
    rows = []
    for model in models:
        records = []
        for mech, prompt, analysis, doc in load_records(root, model, mechanisms):
            records.append(Record(model, mech, prompt, analysis, doc, score_record(prompt, analysis, doc, resolution)))
        rows.append(
            BenchmarkRow(
                model,
                sum(r.scores.analysis for r in records),
                sum(r.scores.executable for r in records),
                sum(r.scores.stl for r in records),
                tuple(records),
            )
        )
    return rows


TABLE_HEADER = ("LLMs", "Analysis", "Executable Code", "Mechanism STL")


def format_table(rows: list[tuple[str, int, int, int]]) -> str:
    width = max([len(TABLE_HEADER[0])] + [len(r[0]) for r in rows])
    lines = [f"{TABLE_HEADER[0]:<{width}}  {TABLE_HEADER[1]:>8}  {TABLE_HEADER[2]:>15}  {TABLE_HEADER[3]:>13}"]
    lines.append("-" * len(lines[0]))
    for name, a, e, s in rows:
        lines.append(f"{name:<{width}}  {a:>8d}  {e:>15d}  {s:>13d}")
    return "\n".join(lines) + "\n"


def format_benchmark(rows: list[BenchmarkRow]) -> str:
    return format_table([(r.model, r.analysis, r.executable, r.stl) for r in rows])


def reference_table() -> list[tuple[str, int, int, int]]:
    """Published per-model scores, shipped for display only; offline scoring does not reproduce them."""
    path = resources.files("mechforge") / "data" / "reference_scores.csv"
    with path.open("r", encoding="utf-8", newline="") as fh:
        return [(r["model"], int(r["analysis"]), int(r["executable"]), int(r["stl"])) for r in csv.DictReader(fh)]


def find_recorded(prompt: str, root: Path | None = None) -> Path | None:
    """Fixture directory of the reference model whose prompt matches ``prompt`` (whitespace-insensitive)."""
    root = Path(root) if root is not None else fixtures_root()
    want = " ".join(prompt.split())
    model_dir = root / "perfect"
    if not model_dir.is_dir():
        return None
    for d in sorted(p for p in model_dir.iterdir() if p.is_dir()):
        f = d / "prompt.txt"
        if f.is_file() and " ".join(f.read_text("utf-8").split()) == want:
            return d
    return None

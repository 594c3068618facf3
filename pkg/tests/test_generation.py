from __future__ import annotations

import io
import json
import shutil
import socket
import urllib.error

import pytest

from mechforge import generation as gen
from mechforge.compiler import DegenerateHole, compile_assembly
from mechforge.generation import (
    GenerationContext,
    LiveClient,
    MissingFixture,
    ModelUnavailable,
    NoDocumentFound,
    ReplayClient,
    analyze,
    extract_document,
    fixtures_root,
    generate_spec,
    run_benchmark,
    score_analysis,
    score_record,
)
from mechforge.mechspec import SpecError, parse_spec, validate_spec

ROOT = fixtures_root()
GRIPPER = ROOT / "perfect" / "gripper"


@pytest.fixture
def no_network(monkeypatch):
    def refuse(*args, **kwargs):
        raise AssertionError("network access attempted")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)


@pytest.fixture(scope="module")
def rows():
    return run_benchmark()


def test_replay_analysis_is_verbatim(no_network):
    client = ReplayClient.from_fixture(GRIPPER)
    ctx = gen.default_context()
    text = analyze((GRIPPER / "prompt.txt").read_text(), ctx, client)
    assert text == (GRIPPER / "analysis.txt").read_text()
    doc = generate_spec(text, ctx, client)
    assert parse_spec(doc) == parse_spec((GRIPPER / "spec.json").read_bytes())
    assert client.calls == ["analysis", "spec"]


def test_empty_prompt_rejected():
    with pytest.raises(ValueError):
        analyze("   ", GenerationContext(), ReplayClient("x"))
    with pytest.raises(ValueError):
        generate_spec("", GenerationContext(), ReplayClient(document="{}"))


def test_unrecorded_stage_names_offline_mode():
    with pytest.raises(ModelUnavailable, match="offline"):
        analyze("make a thing", GenerationContext(), ReplayClient())


def test_document_extraction_rules():
    assert extract_document('Here:\n```json\n{"a": 1}\n```\n') == b'{"a": 1}\n'
    with pytest.raises(NoDocumentFound):
        extract_document("I would build it from two gears and a pin.")
    two = '```json\n{"first": 1}\n```\nor\n```json\n{"second": 2}\n```\n'
    assert json.loads(extract_document(two)) == {"first": 1}
    skip = '```\nnot json\n```\n```json\n{"ok": true}\n```\n'
    assert json.loads(extract_document(skip)) == {"ok": True}
    assert json.loads(extract_document('{"bare": 1}')) == {"bare": 1}
    with pytest.raises(NoDocumentFound):
        extract_document("```json\n[1, 2]\n```")


def test_context_catalog_and_prompt():
    ctx = gen.default_context()
    system = ctx.system_prompt()
    for name in ("circle", "rect", "balk", "ring", "gear"):
        assert f"- {name}(" in system
    assert "```json" in system
    with pytest.raises(ValueError):
        GenerationContext(primitive_catalog={"circle": "disk"})


def test_analysis_rubric():
    assert score_analysis("Parts: a base and a gear. Each part turns on a pin.") == 1
    assert score_analysis("Two gears of different size that mesh.") == 0
    assert score_analysis("The part is a wheel held by a pin.") == 0  # no catalog primitive
    assert score_analysis("A beam component with nothing else.") == 0  # no connection


def test_score_examples():
    prompt, analysis = (GRIPPER / "prompt.txt").read_text(), (GRIPPER / "analysis.txt").read_text()
    doc = (GRIPPER / "spec.json").read_bytes()
    assert score_record(prompt, analysis, doc).as_tuple() == (1, 1, 1)
    assert score_record(prompt, analysis, doc[:-40]).as_tuple()[1:] == (0, 0)
    flawed = (ROOT / "flawed" / "propeller" / "spec.json").read_bytes()
    assert score_record("p", analysis, flawed).as_tuple() == (1, 1, 0)
    with pytest.raises(DegenerateHole):
        compile_assembly(parse_spec(flawed))


def test_benchmark_rows(rows, no_network):
    assert [r.model for r in rows] == sorted(r.model for r in rows)
    perfect = next(r for r in rows if r.model == "perfect")
    assert (perfect.analysis, perfect.executable, perfect.stl) == (10, 10, 10)
    flawed = next(r for r in rows if r.model == "flawed")
    assert (flawed.analysis, flawed.executable, flawed.stl) == (9, 8, 6)
    for r in rows:
        assert [rec.mechanism for rec in r.records] == sorted(rec.mechanism for rec in r.records)
        assert len(r.records) == 10


def test_score_monotonicity_and_pipeline_consistency(rows):
    for r in rows:
        for rec in r.records:
            assert rec.scores.stl <= rec.scores.executable
            try:
                ok = validate_spec(parse_spec(rec.document)) == []
            except SpecError:
                ok = False
            assert rec.scores.executable == int(ok)


def test_table_layout(rows):
    text = gen.format_benchmark(rows)
    header = text.splitlines()[0].split()
    assert header[:2] == ["LLMs", "Analysis"] and "Executable" in header and "STL" in header
    assert text.splitlines()[-1].split() == ["perfect", "10", "10", "10"]


def test_reference_scores_are_documentation():
    ref = gen.reference_table()
    assert ref[0] == ("o1-preview", 10, 10, 8)
    assert len(ref) == 9


def test_missing_fixture(tmp_path):
    shutil.copytree(ROOT / "perfect", tmp_path / "m1")
    shutil.copytree(ROOT / "perfect", tmp_path / "m2")
    (tmp_path / "m2" / "lever" / "analysis.txt").unlink()
    with pytest.raises(MissingFixture, match="m2/lever"):
        run_benchmark(tmp_path)
    with pytest.raises(MissingFixture):
        run_benchmark(tmp_path / "absent")


def test_find_recorded():
    assert gen.find_recorded("  A gripper with a base and two fingers\nconnected with pins and holes. ") == GRIPPER
    assert gen.find_recorded("a spaceship") is None


def test_live_client_requires_configuration():
    with pytest.raises(ModelUnavailable, match="MODEL_ENDPOINT"):
        LiveClient.from_env({})


def test_live_client_request_shape(monkeypatch):
    seen = {}

    class Response(io.BytesIO):
        def __enter__(self):
            return self

        def __exit__(self, *exc):
            return False

    def fake_urlopen(req, timeout):
        seen["url"] = req.full_url
        seen["auth"] = req.get_header("Authorization")
        seen["body"] = json.loads(req.data)
        return Response(json.dumps({"choices": [{"message": {"content": "hello"}}]}).encode())

    monkeypatch.setattr(gen.urllib.request, "urlopen", fake_urlopen)
    client = LiveClient.from_env({"MODEL_ENDPOINT": "http://model.invalid/v1", "MODEL_NAME": "m", "MODEL_API_KEY": "k"})
    assert client.complete("analysis", "sys", "user") == "hello"
    assert seen["auth"] == "Bearer k"
    assert seen["body"]["model"] == "m"
    assert [m["role"] for m in seen["body"]["messages"]] == ["system", "user"]

    def failing(req, timeout):
        raise urllib.error.URLError("down")

    monkeypatch.setattr(gen.urllib.request, "urlopen", failing)
    with pytest.raises(ModelUnavailable):
        client.complete("analysis", "sys", "user")

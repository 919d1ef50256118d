import json
from dataclasses import replace

import pytest

from conftest import make_gateway, needs_sandbox
from researchflow.errors import StageError, UnrecoverableRunError, ValidationError
from researchflow.pipeline import RunStore, resume_run, run_identifier, run_pipeline
from researchflow.programming.sandbox import LocalSandbox


def sandbox():
    return LocalSandbox(timeout_s=30, memory_mb=2048)


def run(tmp_path, name, script, client, request_obj, config, **kw):
    gw = make_gateway(script)
    art = run_pipeline(request_obj, config, run_dir=tmp_path / name, gateway=gw, client=client, sandbox=sandbox(), **kw)
    return art, gw


def manifest(path):
    return json.loads((path / "manifest.json").read_text())


@needs_sandbox
def test_full_run_layout_and_outcomes(tmp_path, script, client, request_obj, config):
    art, _ = run(tmp_path, "r", script, client, request_obj, config)
    assert list(art.stages) == ["search", "literature", "design", "programming"] and art.complete
    files = set().union(*art.stages.values())
    for rel in [
        "search/kept.json", "search/documents/PMC9001.json",
        "literature/reports/PMC9002.json", "literature/reports/PMC9002.md", "literature/corpus.json",
        "design/protocol.json", "design/protocol.md",
        "programming/tasks.json", "programming/outcomes.json",
        "programming/tasks/1/rev1/code", "programming/tasks/1/rev2/outputs/counts.csv",
        "programming/tasks/2/rev1/outputs/de_genes.tsv",
    ]:
        assert rel in files, rel
    outcomes = art.load_json("programming/outcomes.json")
    assert outcomes["success_rate"] == 100.0
    assert [(o["task_id"], o["iterations"]) for o in outcomes["outcomes"]] == [(1, 2), (2, 1)]
    tel = art.telemetry
    assert tel["stages"]["design"]["calls"] > 0
    assert [(e["task_id"], e["revision"]) for e in tel["executions"]] == [(1, 2), (2, 1)]
    assert tel["sandbox"]["backend"] == "local"


@needs_sandbox
def test_runs_are_reproducible_across_directories(tmp_path, script, client, request_obj, config):
    a, _ = run(tmp_path, "a", script, client, request_obj, config)
    b, _ = run(tmp_path, "deep/b", json.loads(json.dumps(script)), client, request_obj, config)
    assert manifest(a.run_dir) == manifest(b.run_dir)


@needs_sandbox
def test_resume_after_literature_matches_uninterrupted(tmp_path, script, client, request_obj, config):
    full, _ = run(tmp_path, "full", script, client, request_obj, config)
    part, _ = run(tmp_path, "part", json.loads(json.dumps(script)), client, request_obj, config,
                  stop_after="literature")
    assert list(part.stages) == ["search", "literature"]
    gw = make_gateway(json.loads(json.dumps(script)))
    resumed = resume_run(tmp_path / "part", gateway=gw, client=client, sandbox=sandbox())
    assert manifest(resumed.run_dir) == manifest(full.run_dir)
    assert not gw.backend.calls_for("search") and not gw.backend.calls_for("literature")


@needs_sandbox
def test_complete_run_is_not_redone(tmp_path, script, client, request_obj, config):
    run(tmp_path, "r", script, client, request_obj, config)
    before = manifest(tmp_path / "r")
    art, gw = run(tmp_path, "r", json.loads(json.dumps(script)), client, request_obj, config)
    assert gw.backend.transcript == []
    assert manifest(art.run_dir) == before


def test_interrupted_stage_leftovers_are_cleared(tmp_path, script, client, request_obj, config):
    run_pipeline(request_obj, config, run_dir=tmp_path / "r", gateway=make_gateway(script), client=client,
                 stop_after="search")
    stray = tmp_path / "r" / "literature" / "reports" / "stale.json"
    stray.parent.mkdir(parents=True)
    stray.write_text("{}")
    run_pipeline(request_obj, config, run_dir=tmp_path / "r", gateway=make_gateway(script), client=client,
                 stop_after="literature")
    assert not stray.exists()
    lit = manifest(tmp_path / "r")["stages"][1]
    assert lit["name"] == "literature" and "literature/reports/stale.json" not in lit["files"]


@pytest.fixture
def searched(tmp_path, script, client, request_obj, config):
    run_pipeline(request_obj, config, run_dir=tmp_path / "r", gateway=make_gateway(script), client=client,
                 stop_after="search")
    return tmp_path / "r"


def _resume(run_dir, script, client):
    return resume_run(run_dir, gateway=make_gateway(script), client=client, stop_after="literature")


def test_modified_artifact_is_unrecoverable(searched, script, client):
    (searched / "search" / "kept.json").write_text("[]")
    with pytest.raises(UnrecoverableRunError, match="modified"):
        _resume(searched, script, client)


def test_missing_artifact_is_unrecoverable(searched, script, client):
    (searched / "search" / "queries.json").unlink()
    with pytest.raises(UnrecoverableRunError, match="does not exist"):
        _resume(searched, script, client)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda m: m["stages"].append({"name": "deploy", "files": {}}),
        lambda m: m["stages"].insert(0, {"name": "design", "files": {}}),
        lambda m: m.update(schema_version=99),
        lambda m: m.pop("run_id"),
    ],
)
def test_malformed_manifest_is_unrecoverable(searched, script, client, mutate):
    m = manifest(searched)
    mutate(m)
    (searched / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(UnrecoverableRunError):
        _resume(searched, script, client)


def test_truncated_manifest_is_unrecoverable(searched, script, client):
    (searched / "manifest.json").write_text('{"schema_version": 1, "run_')
    with pytest.raises(UnrecoverableRunError):
        _resume(searched, script, client)


def test_different_config_in_same_directory(searched, script, client, request_obj, config):
    other = replace(config, max_review_rounds=2)
    with pytest.raises(UnrecoverableRunError):
        run_pipeline(request_obj, other, run_dir=searched, gateway=make_gateway(script), client=client)


def test_run_id_ignores_endpoints(request_obj, config):
    moved = replace(config, eutils=replace(config.eutils, base_url="http://elsewhere"))
    assert run_identifier(request_obj, moved) == run_identifier(request_obj, config)
    assert run_identifier(request_obj, replace(config, max_workers=1)) != run_identifier(request_obj, config)


def test_stage_failure_leaves_stage_uncommitted(tmp_path, script, client, request_obj, config):
    for key in list(script):
        if ".score_paper." in key:
            script[key] = {"always": {"score": 1}}
    with pytest.raises(StageError):
        run_pipeline(request_obj, config, run_dir=tmp_path / "r", gateway=make_gateway(script), client=client)
    assert manifest(tmp_path / "r")["stages"] == []
    tel = json.loads((tmp_path / "r" / "telemetry.json").read_text())
    assert tel["stages"]["search"]["calls"] > 0


def test_resume_without_manifest(tmp_path, script, client):
    with pytest.raises(UnrecoverableRunError):
        resume_run(tmp_path, gateway=make_gateway(script), client=client)


def test_unknown_stop_stage(tmp_path, script, request_obj, config):
    with pytest.raises(ValidationError):
        run_pipeline(request_obj, config, run_dir=tmp_path, gateway=make_gateway(script), stop_after="deploy")


@needs_sandbox
def test_evaluation_stage(tmp_path, script, client, request_obj, config):
    art, _ = run(tmp_path, "r", script, client, request_obj, replace(config, evaluate=True))
    assert list(art.stages)[-1] == "evaluation"
    scores = art.load_json("evaluation/scores.json")["scores"]
    assert scores["overall"] == pytest.approx(3.75)


def test_store_telemetry_default(tmp_path):
    assert RunStore(tmp_path).load_telemetry() == {"stages": {}, "executions": [], "sandbox": None}

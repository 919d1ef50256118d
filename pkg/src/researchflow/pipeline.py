"""Stage orchestration over a resumable run directory.

Layout::

    <run>/manifest.json      stage order and sha256 of every artifact
    <run>/telemetry.json     token counts per stage, execution timings
    <run>/request.json, config.json
    <run>/search/ literature/ design/ programming/ [evaluation/]

A stage's files are listed in the manifest only after all of them are
written, so a stage missing from the manifest is redone from scratch.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from researchflow.config import PipelineConfig, validate_config
from researchflow.design import Protocol, run_design
from researchflow.errors import EvaluationError, StageError, UnrecoverableRunError, ValidationError
from researchflow.evaluation.judge import judge_protocol
from researchflow.literature.document import StructuredDocument
from researchflow.literature.report import ExperimentalReport, ReportAnalysis
from researchflow.literature.corpus import build_reference_corpus
from researchflow.literature.stage import LiteratureOutcome, run_literature
from researchflow.llm.gateway import Gateway
from researchflow.programming.loop import run_programming
from researchflow.programming.sandbox import Sandbox, make_sandbox
from researchflow.programming.tasks import tasks_to_json
from researchflow.request import ResearchRequest
from researchflow.search.agents import SearchOutcome, run_search
from researchflow.search.eutils import EUtilsClient
from researchflow.search.query import BooleanQuery
from researchflow.search.records import DatasetRecord, PaperRecord

log = logging.getLogger(__name__)

STAGES = ("search", "literature", "design", "programming", "evaluation")
MANIFEST_VERSION = 1


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_json(path: Path, value: Any):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(value, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def read_json(path: Path) -> Any:
    return json.loads(path.read_text(encoding="utf-8"))


def _safe_name(identifier: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in identifier)


def run_identifier(request: ResearchRequest, config: PipelineConfig) -> str:
    # endpoints are where a run talks to, not what it computes
    cfg = config.to_dict()
    cfg["llm"].pop("base_url")
    cfg["eutils"].pop("base_url")
    cfg["sandbox"].pop("docker_socket")
    blob = json.dumps({"request": request.to_dict(), "config": cfg}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class RunArtifacts:
    run_id: str
    run_dir: Path
    stages: dict[str, dict[str, str]]  # stage -> {relative path: sha256}, in stage order
    telemetry: dict = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return "programming" in self.stages

    def path(self, rel: str) -> Path:
        return self.run_dir / rel

    def files(self, stage: str) -> list[str]:
        return list(self.stages.get(stage, {}))

    def load_json(self, rel: str) -> Any:
        return read_json(self.run_dir / rel)


class RunStore:
    """Reads and writes one run directory; the only writer of manifest.json."""

    def __init__(self, run_dir: str | Path):
        self.root = Path(run_dir)
        self.manifest_path = self.root / "manifest.json"
        self.telemetry_path = self.root / "telemetry.json"

    def exists(self) -> bool:
        return self.manifest_path.exists()

    def stage_dir(self, stage: str) -> Path:
        return self.root / stage

    def initialize(self, run_id: str, request: ResearchRequest, config: PipelineConfig) -> dict:
        self.root.mkdir(parents=True, exist_ok=True)
        write_json(self.root / "request.json", request.to_dict())
        write_json(self.root / "config.json", config.to_dict())
        manifest = {
            "schema_version": MANIFEST_VERSION,
            "run_id": run_id,
            # config identity is carried by run_id, which ignores endpoints
            "inputs": {"request.json": _sha256(self.root / "request.json")},
            "stages": [],
        }
        self._write_manifest(manifest)
        return manifest

    def _write_manifest(self, manifest: dict):
        tmp = self.manifest_path.with_suffix(".json.tmp")
        write_json(tmp, manifest)
        os.replace(tmp, self.manifest_path)

    def load_manifest(self) -> dict:
        try:
            manifest = read_json(self.manifest_path)
        except (OSError, ValueError) as exc:
            raise UnrecoverableRunError(f"cannot read manifest: {exc}") from exc
        if not isinstance(manifest, dict) or manifest.get("schema_version") != MANIFEST_VERSION:
            raise UnrecoverableRunError("manifest has an unknown schema version")
        stages = manifest.get("stages")
        if not isinstance(stages, list) or not isinstance(manifest.get("run_id"), str):
            raise UnrecoverableRunError("manifest is missing run_id or stages")
        names = []
        for entry in stages:
            if not isinstance(entry, dict) or entry.get("name") not in STAGES:
                raise UnrecoverableRunError(f"manifest names an unknown stage: {entry!r:.80}")
            names.append(entry["name"])
        if names != list(STAGES[: len(names)]):
            raise UnrecoverableRunError(f"manifest stages out of order: {names}")
        for entry in [{"files": manifest.get("inputs", {})}] + stages:
            for rel, digest in entry.get("files", {}).items():
                path = self.root / rel
                if not path.is_file():
                    raise UnrecoverableRunError(f"manifest entry {rel} does not exist")
                if _sha256(path) != digest:
                    raise UnrecoverableRunError(f"manifest entry {rel} was modified")
        return manifest

    def completed(self, manifest: dict) -> list[str]:
        return [e["name"] for e in manifest["stages"]]

    def clear_stage(self, stage: str):
        d = self.stage_dir(stage)
        if d.exists():
            shutil.rmtree(d)

    def commit_stage(self, manifest: dict, stage: str):
        d = self.stage_dir(stage)
        d.mkdir(parents=True, exist_ok=True)
        files = {
            p.relative_to(self.root).as_posix(): _sha256(p)
            for p in sorted(d.rglob("*"))
            if p.is_file()
        }
        manifest["stages"].append({"name": stage, "files": files})
        self._write_manifest(manifest)

    def load_telemetry(self) -> dict:
        if self.telemetry_path.exists():
            return read_json(self.telemetry_path)
        return {"stages": {}, "executions": [], "sandbox": None}

    def write_telemetry(self, telemetry: dict):
        write_json(self.telemetry_path, telemetry)

    def artifacts(self, manifest: dict) -> RunArtifacts:
        return RunArtifacts(
            manifest["run_id"],
            self.root,
            {e["name"]: dict(e["files"]) for e in manifest["stages"]},
            self.load_telemetry(),
        )


# -- per-stage persistence ------------------------------------------------------


def save_search(d: Path, out: SearchOutcome):
    write_json(d / "queries.json", [q.serialize() for q in out.queries])
    write_json(d / "papers.json", [p.to_dict() for p in out.papers])
    write_json(d / "kept.json", [p.identifier for p in out.kept])
    write_json(d / "datasets.json", [ds.to_dict() for ds in out.datasets])
    for pid, doc in sorted(out.documents.items()):
        write_json(d / "documents" / f"{_safe_name(pid)}.json", doc.to_dict())
    write_json(d / "warnings.json", out.warnings)


def load_search(d: Path) -> SearchOutcome:
    papers = [PaperRecord.from_dict(p) for p in read_json(d / "papers.json")]
    by_id = {p.identifier: p for p in papers}
    kept = [by_id[i] for i in read_json(d / "kept.json")]
    documents = {
        p.identifier: StructuredDocument.from_dict(read_json(d / "documents" / f"{_safe_name(p.identifier)}.json"))
        for p in kept
    }
    return SearchOutcome(
        [BooleanQuery.parse(q) for q in read_json(d / "queries.json")],
        papers,
        kept,
        documents,
        [DatasetRecord.from_dict(x) for x in read_json(d / "datasets.json")],
        read_json(d / "warnings.json"),
    )


def save_literature(d: Path, out: LiteratureOutcome):
    order = []
    for report in out.reports:
        name = _safe_name(report.paper_id)
        order.append(report.paper_id)
        write_json(d / "reports" / f"{name}.json", report.to_dict())
        _write_text(d / "reports" / f"{name}.md", report.render() + "\n")
    for analysis in out.analyses:
        write_json(d / "analyses" / f"{_safe_name(analysis.paper_id)}.json", analysis.to_dict())
    write_json(d / "reports.json", order)
    write_json(d / "corpus.json", {"entries": [e.to_dict() for e in out.corpus.entries]})
    write_json(d / "datasets.json", [ds.to_dict() for ds in out.datasets])
    write_json(d / "transcripts.json", out.transcripts)
    write_json(d / "warnings.json", out.warnings)


def load_literature(d: Path) -> LiteratureOutcome:
    order = read_json(d / "reports.json")
    reports = [ExperimentalReport.from_dict(read_json(d / "reports" / f"{_safe_name(p)}.json")) for p in order]
    analyses = [ReportAnalysis.from_dict(read_json(d / "analyses" / f"{_safe_name(p)}.json")) for p in order]
    return LiteratureOutcome(
        reports,
        analyses,
        build_reference_corpus(reports, analyses),
        [DatasetRecord.from_dict(x) for x in read_json(d / "datasets.json")],
        read_json(d / "transcripts.json"),
        read_json(d / "warnings.json"),
    )


def save_design(d: Path, out):
    write_json(d / "plans.json", [p.to_dict() for p in out.plans])
    write_json(d / "outline.json", out.outline.to_dict())
    write_json(d / "protocol.json", out.protocol.to_dict())
    _write_text(d / "protocol.md", out.protocol.to_markdown())
    write_json(d / "transcripts.json", out.transcripts)
    write_json(d / "warnings.json", out.warnings)


def load_protocol(d: Path) -> Protocol:
    return Protocol.from_dict(read_json(d / "protocol.json"))


# -- orchestration ------------------------------------------------------------------


@dataclass
class _Context:
    request: ResearchRequest
    config: PipelineConfig
    gateway: Gateway
    client: EUtilsClient | None
    sandbox: Sandbox | None
    store: RunStore
    telemetry: dict


def _stage_search(ctx: _Context):
    if ctx.client is None:
        raise StageError("search", "no E-utilities client configured")
    out = run_search(ctx.gateway, ctx.client, ctx.request, ctx.config)
    save_search(ctx.store.stage_dir("search"), out)


def _stage_literature(ctx: _Context):
    if ctx.client is None:
        raise StageError("literature", "no E-utilities client configured")
    search = load_search(ctx.store.stage_dir("search"))
    documents = [search.documents[p.identifier] for p in search.kept]
    out = run_literature(ctx.gateway, ctx.client, ctx.request, ctx.config, documents, search.datasets)
    save_literature(ctx.store.stage_dir("literature"), out)


def _stage_design(ctx: _Context):
    lit = load_literature(ctx.store.stage_dir("literature"))
    out = run_design(ctx.gateway, ctx.request, ctx.config, lit.corpus, lit.useful_datasets)
    save_design(ctx.store.stage_dir("design"), out)


def _stage_programming(ctx: _Context):
    protocol = load_protocol(ctx.store.stage_dir("design"))
    d = ctx.store.stage_dir("programming")
    sandbox = ctx.sandbox or make_sandbox(ctx.config.sandbox)
    ctx.telemetry["sandbox"] = sandbox.describe()
    executions = ctx.telemetry.setdefault("executions", [])

    def on_outcome(outcome):
        if outcome.final is not None:
            executions.append(
                {"task_id": outcome.task_id, "revision": outcome.final.revision, "duration_s": outcome.final.duration_s}
            )

    out = run_programming(
        ctx.gateway, protocol, ctx.config, d / "tasks", sandbox,
        on_tasks=lambda tasks: write_json(d / "tasks.json", tasks_to_json(tasks)),
        on_outcome=on_outcome,
    )
    write_json(
        d / "outcomes.json",
        {"success_rate": out.success_rate, "outcomes": [o.to_dict() for o in out.outcomes]},
    )


def _stage_evaluation(ctx: _Context):
    protocol = load_protocol(ctx.store.stage_dir("design"))
    try:
        judgement = judge_protocol(ctx.gateway, ctx.config.profile("judge"), protocol)
    except EvaluationError as exc:
        raise StageError("evaluation", str(exc)) from exc
    write_json(ctx.store.stage_dir("evaluation") / "scores.json", judgement.to_dict())


_RUNNERS = {
    "search": _stage_search,
    "literature": _stage_literature,
    "design": _stage_design,
    "programming": _stage_programming,
    "evaluation": _stage_evaluation,
}


def _drive(ctx: _Context, manifest: dict, stop_after: str | None) -> RunArtifacts:
    store = ctx.store
    wanted = [s for s in STAGES if s != "evaluation" or ctx.config.evaluate]
    done = store.completed(manifest)
    ctx.gateway.telemetry.load(ctx.telemetry.get("stages", {}))
    for stage in wanted:
        if stage in done:
            continue
        store.clear_stage(stage)  # leftovers of an interrupted attempt
        log.info("stage %s: starting", stage)
        try:
            _RUNNERS[stage](ctx)
        finally:
            ctx.telemetry["stages"] = ctx.gateway.telemetry.stage_totals()
            store.write_telemetry(ctx.telemetry)
        store.commit_stage(manifest, stage)
        log.info("stage %s: committed", stage)
        if stop_after == stage:
            break
    return store.artifacts(manifest)


def run_pipeline(
    request: ResearchRequest,
    config: PipelineConfig,
    *,
    run_dir: str | Path,
    gateway: Gateway,
    client: EUtilsClient | None = None,
    sandbox: Sandbox | None = None,
    stop_after: str | None = None,
) -> RunArtifacts:
    """Run every stage into ``run_dir``; a directory holding a manifest is resumed."""
    if not isinstance(request, ResearchRequest):
        raise ValidationError("run_pipeline needs a ResearchRequest")
    if stop_after is not None and stop_after not in STAGES:
        raise ValidationError(f"unknown stage {stop_after!r}")
    store = RunStore(run_dir)
    run_id = run_identifier(request, config)
    if store.exists():
        manifest = store.load_manifest()
        if manifest["run_id"] != run_id:
            raise UnrecoverableRunError(
                f"{run_dir} holds run {manifest['run_id']}, not {run_id}; use a fresh directory"
            )
    else:
        manifest = store.initialize(run_id, request, config)
    ctx = _Context(request, config, gateway, client, sandbox, store, store.load_telemetry())
    return _drive(ctx, manifest, stop_after)


def resume_run(
    run_dir: str | Path,
    config: PipelineConfig | None = None,
    *,
    gateway: Gateway,
    client: EUtilsClient | None = None,
    sandbox: Sandbox | None = None,
    stop_after: str | None = None,
) -> RunArtifacts:
    """Continue from the first stage missing in the manifest.

    Without ``config`` the run's own ``config.json`` is used.
    """
    store = RunStore(run_dir)
    if not store.exists():
        raise UnrecoverableRunError(f"{run_dir} has no manifest.json")
    manifest = store.load_manifest()
    try:
        request = ResearchRequest.from_dict(read_json(store.root / "request.json"))
        if config is None:
            config = validate_config(read_json(store.root / "config.json"))
    except (OSError, ValueError) as exc:
        raise UnrecoverableRunError(f"cannot read run inputs: {exc}") from exc
    return run_pipeline(
        request, config, run_dir=run_dir, gateway=gateway, client=client, sandbox=sandbox, stop_after=stop_after
    )

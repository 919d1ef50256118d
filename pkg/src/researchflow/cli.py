"""Command-line entry point: ``researchflow <command> ...``."""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from researchflow.config import PipelineConfig, load_config, validate_config
from researchflow.design import Protocol
from researchflow.errors import (
    ConfigError,
    CredentialError,
    ResearchFlowError,
    StageError,
    UnrecoverableRunError,
    ValidationError,
)
from researchflow.evaluation.agreement import fleiss_kappa, kendalls_w, load_matrix
from researchflow.evaluation.judge import grade_error, judge_protocol
from researchflow.llm.backends import OpenAIBackend, ScriptedBackend
from researchflow.llm.gateway import Gateway
from researchflow.pipeline import read_json, resume_run, run_pipeline, write_json
from researchflow.request import ResearchRequest
from researchflow.search.eutils import EUtilsClient
from researchflow.search.stub import EUtilsStub

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_STAGE, EXIT_RUN = 0, 1, 2, 3, 4

log = logging.getLogger("researchflow")


def _gateway(args, config: PipelineConfig) -> Gateway:
    if args.mock:
        backend = ScriptedBackend.from_file(args.mock)
        return Gateway(backend, max_attempts=config.llm.max_attempts, backoff_base=0.0)
    if not os.environ.get(config.llm.api_key_env):
        raise CredentialError(f"set {config.llm.api_key_env} or pass --mock <script>")
    backend = OpenAIBackend(
        config.llm.base_url, config.llm.model, api_key_env=config.llm.api_key_env,
        timeout=config.llm.request_timeout_s,
    )
    return Gateway(backend, max_attempts=config.llm.max_attempts, backoff_base=config.llm.backoff_base_s)


@contextlib.contextmanager
def _eutils(args, config: PipelineConfig):
    """Yield ``(config, client)``, serving ``--fixture-corpus`` locally if given."""
    stub = None
    url = args.eutils_url
    if args.fixture_corpus:
        stub = EUtilsStub.from_file(args.fixture_corpus).start()
        url = stub.base_url
    if url:
        config = replace(config, eutils=replace(config.eutils, base_url=url))
    e = config.eutils
    client = EUtilsClient(
        e.base_url, api_key_env=e.api_key_env, tool=e.tool, email=e.email, timeout=e.request_timeout_s
    )
    try:
        yield config, client
    finally:
        client.close()
        if stub is not None:
            stub.stop()


def _print_run(artifacts) -> None:
    print(f"run {artifacts.run_id} in {artifacts.run_dir}")
    for stage, files in artifacts.stages.items():
        print(f"  {stage:<12} {len(files)} files")
    outcomes = artifacts.run_dir / "programming" / "outcomes.json"
    if outcomes.exists():
        print(f"  execution success rate: {read_json(outcomes)['success_rate']:.2f}%")


def cmd_run(args) -> int:
    request = ResearchRequest(args.objective, args.conditions or "", args.requirements or "")
    config = load_config(args.config)
    if args.evaluate:
        config = replace(config, evaluate=True)
    with _eutils(args, config) as (config, client):
        artifacts = run_pipeline(
            request, config, run_dir=args.out, gateway=_gateway(args, config), client=client,
            stop_after=args.stop_after,
        )
    _print_run(artifacts)
    return EXIT_OK


def cmd_resume(args) -> int:
    run_dir = Path(args.run)
    config = load_config(args.config) if args.config else None
    if config is None:
        stored = run_dir / "config.json"
        if not stored.exists():
            raise UnrecoverableRunError(f"{run_dir} has no config.json")
        config = validate_config(read_json(stored))
    with _eutils(args, config) as (config, client):
        artifacts = resume_run(run_dir, config, gateway=_gateway(args, config), client=client)
    _print_run(artifacts)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = load_config(args.config)
    protocol = Protocol.from_dict(read_json(Path(args.protocol)))
    judgement = judge_protocol(_gateway(args, config), config.profile("judge"), protocol)
    result = judgement.to_dict()
    if args.out:
        write_json(Path(args.out), result)
    print(f"{'dimension':<22}score")
    for name, value in result["scores"].items():
        print(f"{name:<22}{value:.4f}")
    s = result["stats"]
    print(f"\nsections={s['sections']} n_ts={s['n_ts']} n_as={s['n_as']} n_cs={s['n_cs']} n_rs={s['n_rs']} "
          f"l_steps={s['l_steps']:.3f}")
    return EXIT_OK


def cmd_grade_errors(args) -> int:
    run_dir = Path(args.run)
    config = load_config(args.config) if args.config else None
    if config is None:
        config = validate_config(read_json(run_dir / "config.json"))
    prog = run_dir / "programming"
    tasks = {t["id"]: t for t in read_json(prog / "tasks.json")["tasks"]}
    outcomes = read_json(prog / "outcomes.json")["outcomes"]
    failed = [o for o in outcomes if o["status"] == "failed"]
    gateway = _gateway(args, config)
    rows = []
    for o in failed:
        tid = o["task_id"]
        rev = o["final_revision"]
        if rev is None:
            rows.append({"task_id": tid, "level": o["error_level"], "rationale": o["error_rationale"]})
            continue
        rev_dir = prog / "tasks" / str(tid) / f"rev{rev}"
        grade = grade_error(
            gateway, config.profile("judge"), tasks[tid]["description"],
            (rev_dir / "code").read_text(encoding="utf-8"), (rev_dir / "stderr").read_text(encoding="utf-8"),
            step_key=f"evaluation.grade_error.task{tid}",
        )
        rows.append({"task_id": tid, "level": grade.level, "rationale": grade.rationale})
    if args.out:
        write_json(Path(args.out), {"error_levels": rows})
    print(f"{len(failed)} failed of {len(outcomes)} tasks")
    for r in rows:
        print(f"  task {r['task_id']}: level {r['level']}  {r['rationale']}")
    return EXIT_OK


def cmd_agreement(args) -> int:
    matrix = load_matrix(args.matrix)
    value = fleiss_kappa(matrix) if args.statistic == "fleiss" else kendalls_w(matrix)
    print(json.dumps({"statistic": args.statistic, "value": value}))
    return EXIT_OK


def _add_backend_args(p: argparse.ArgumentParser, eutils: bool = True):
    p.add_argument("--config", help="YAML or JSON config file")
    p.add_argument("--mock", metavar="SCRIPT", help="JSON script for the scripted backend")
    if eutils:
        p.add_argument("--eutils-url", help="override the E-utilities base URL")
        p.add_argument("--fixture-corpus", metavar="JSON", help="serve this corpus from a local E-utilities stub")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="researchflow", description="Staged LLM research pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run every stage for a research request")
    p.add_argument("--objective", required=True)
    p.add_argument("--conditions")
    p.add_argument("--requirements")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--evaluate", action="store_true", help="also judge the protocol")
    p.add_argument("--stop-after", choices=["search", "literature", "design", "programming"], help=argparse.SUPPRESS)
    _add_backend_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("resume", help="continue an interrupted run")
    p.add_argument("--run", required=True, help="run directory")
    _add_backend_args(p)
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("evaluate", help="score a protocol JSON on five dimensions")
    p.add_argument("--protocol", required=True)
    p.add_argument("--out", help="write scores JSON here")
    _add_backend_args(p, eutils=False)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("grade-errors", help="grade a run's failed tasks by error level")
    p.add_argument("--run", required=True)
    p.add_argument("--out")
    _add_backend_args(p, eutils=False)
    p.set_defaults(func=cmd_grade_errors)

    p = sub.add_parser("agreement", help="inter-rater agreement over a CSV/JSON matrix")
    p.add_argument("statistic", choices=["fleiss", "kendall"])
    p.add_argument("matrix", help="subjects x raters matrix file")
    p.set_defaults(func=cmd_agreement)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: stage '{exc.stage}' failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (ConfigError, ValidationError, CredentialError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UnrecoverableRunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN
    except (ResearchFlowError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())

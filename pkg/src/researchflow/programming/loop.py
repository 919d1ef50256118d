"""Generate, execute, refine: the per-task code loop and the stage runner."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from researchflow.design import Protocol
from researchflow.errors import (
    CodeGenerationError,
    EvaluationError,
    MalformedOutputError,
    SandboxUnavailableError,
    StageError,
    TaskExtractionError,
)
from researchflow.evaluation.judge import grade_error
from researchflow.evaluation.metrics import execution_success_rate
from researchflow.llm.gateway import Gateway
from researchflow.llm.prompts import dump
from researchflow.programming.sandbox import INTERPRETERS, CodeArtifact, ExecutionResult, Sandbox
from researchflow.programming.tasks import DryLabTask, extract_tasks

log = logging.getLogger(__name__)

DEFAULT_LANGUAGE = "R"
STREAM_TAIL = 4000
SUCCESS, RETRY, GIVE_UP = "success", "retry", "give-up"
# Code generation that cannot even produce a script is a structural failure.
CODEGEN_FAILURE_LEVEL = 4

CODE_SCHEMA = {
    "type": "object",
    "properties": {
        "action": {"enum": ["code", "terminate"]},
        "language": {"type": "string"},
        "code": {"type": "string"},
        "reason": {"type": "string"},
    },
}


@dataclass(frozen=True)
class Termination:
    task_id: int
    reason: str


@dataclass
class TaskContext:
    datasets: list[str] = field(default_factory=list)
    # {"id", "description", "outputs": [paths relative to TASKS_ROOT]}
    predecessors: list[dict] = field(default_factory=list)

    def render(self) -> str:
        lines = [f"Datasets: {', '.join(self.datasets) or '(none)'}"]
        if self.predecessors:
            lines.append("Outputs of earlier tasks (relative to $TASKS_ROOT):")
            for p in self.predecessors:
                files = ", ".join(p["outputs"]) or "(no files)"
                lines.append(f"- task {p['id']} ({p['description']}): {files}")
        return "\n".join(lines)


@dataclass
class TaskOutcome:
    task_id: int
    status: str  # "success" | "failed"
    iterations: int
    final: ExecutionResult | None
    error_level: int | None = None
    error_rationale: str = ""
    terminated: bool = False

    def __post_init__(self):
        if self.status not in ("success", "failed"):
            raise ValueError(f"unknown task status {self.status!r}")
        if (self.error_level is not None) != (self.status == "failed"):
            raise ValueError("error level is set exactly when the task failed")

    @property
    def final_revision(self) -> int | None:
        return self.final.revision if self.final else None

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "status": self.status,
            "iterations": self.iterations,
            "final_revision": self.final_revision,
            "error_level": self.error_level,
            "error_rationale": self.error_rationale,
            "terminated": self.terminated,
        }


def _tail(text: str) -> str:
    return text if len(text) <= STREAM_TAIL else "...\n" + text[-STREAM_TAIL:]


def generate_code(
    gateway: Gateway,
    profile,
    task: DryLabTask,
    context: TaskContext,
    previous: tuple[CodeArtifact, ExecutionResult] | None = None,
    *,
    languages=tuple(INTERPRETERS),
) -> CodeArtifact | Termination:
    revision = 1 if previous is None else previous[0].revision + 1
    parts = [
        f"Task {task.id}: {task.description}",
        f"Inputs:\n{dump([{'type': t, 'description': d} for t, d in task.inputs])}",
        f"Expected outputs:\n{dump([{'type': t, 'description': d} for t, d in task.outputs])}",
        context.render(),
    ]
    if previous is None:
        parts.append(
            f"Write a {DEFAULT_LANGUAGE} script for this task.\n\n"
            f'Reply as {{"action": "code", "language": "{DEFAULT_LANGUAGE}", "code": "..."}}.'
        )
    else:
        code, result = previous
        status = "timed out" if result.timed_out else f"exited with status {result.exit_status}"
        parts.append(
            f"Your previous script (revision {code.revision}):\n{code.source}\n\n"
            f"It {status}.\nStandard output:\n{_tail(result.stdout)}\n"
            f"Standard error:\n{_tail(result.stderr)}\n\n"
            "Fix the script, or give up if the task cannot be done.\n\n"
            f'Reply as {{"action": "code", "language": "{code.language}", "code": "..."}} '
            'or {"action": "terminate", "reason": "..."}.'
        )

    def check(value):
        action = value.get("action", "code")
        if action == "terminate":
            if previous is None:
                raise ValueError("nothing to give up on yet; write the first script")
            return
        if not value.get("code", "").strip():
            raise ValueError("'code' must be a non-empty script")
        lang = value.get("language", DEFAULT_LANGUAGE)
        if lang not in languages:
            raise ValueError(f"unsupported language {lang!r}; use one of {list(languages)}")

    try:
        value = gateway.complete_structured(
            profile, [{"role": "user", "content": "\n\n".join(parts)}], CODE_SCHEMA,
            step_key=f"programming.task{task.id}.rev{revision}", check=check,
        ).value
    except MalformedOutputError as exc:
        raise CodeGenerationError(f"task {task.id} revision {revision}: {exc}") from exc
    if value.get("action", "code") == "terminate":
        return Termination(task.id, value.get("reason", ""))
    return CodeArtifact(task.id, value.get("language", DEFAULT_LANGUAGE), value["code"], revision)


def refine_or_terminate(history: list[tuple[CodeArtifact, ExecutionResult]], cap: int, terminated: bool = False) -> str:
    if not history:
        raise ValueError("refine_or_terminate needs at least one execution")
    if history[-1][1].success:
        return SUCCESS
    if terminated or len(history) >= cap:
        return GIVE_UP
    return RETRY


def run_task_loop(
    task: DryLabTask,
    context: TaskContext,
    *,
    gateway: Gateway,
    coder,
    judge,
    sandbox: Sandbox,
    tasks_root: Path,
    cap: int = 10,
) -> TaskOutcome:
    """Iterate until the code runs, the generator gives up, or ``cap`` executions."""
    tasks_root = Path(tasks_root)
    history: list[tuple[CodeArtifact, ExecutionResult]] = []
    terminated = False
    while True:
        try:
            artifact = generate_code(gateway, coder, task, context, history[-1] if history else None)
        except CodeGenerationError as exc:
            log.warning("%s", exc)
            return TaskOutcome(
                task.id, "failed", len(history), history[-1][1] if history else None,
                CODEGEN_FAILURE_LEVEL, f"code generation failed: {exc}",
            )
        if isinstance(artifact, Termination):
            terminated = True
        else:
            rev_dir = tasks_root / str(task.id) / f"rev{artifact.revision}"
            result = sandbox.execute(artifact, rev_dir, tasks_root)
            (rev_dir / "result.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n", encoding="utf-8")
            history.append((artifact, result))
        decision = refine_or_terminate(history, cap, terminated)
        if decision == SUCCESS:
            return TaskOutcome(task.id, "success", len(history), history[-1][1])
        if decision == GIVE_UP:
            code, result = history[-1]
            grade = grade_error(
                gateway, judge, task.description, code.source, result.stderr,
                step_key=f"programming.task{task.id}.grade",
            )
            return TaskOutcome(task.id, "failed", len(history), result, grade.level, grade.rationale, terminated)


@dataclass
class ProgrammingOutcome:
    tasks: list[DryLabTask]
    outcomes: list[TaskOutcome]

    @property
    def success_rate(self) -> float:
        return execution_success_rate(self.outcomes)


def run_programming(
    gateway: Gateway,
    protocol: Protocol,
    config,
    tasks_root: Path,
    sandbox: Sandbox,
    *,
    on_tasks=None,
    on_outcome=None,
) -> ProgrammingOutcome:
    """Run tasks in id order; each sees the outputs of the ones before it."""
    try:
        tasks = extract_tasks(gateway, config.profile("extractor"), protocol)
    except TaskExtractionError as exc:
        raise StageError("programming", f"task extraction: {exc}") from exc
    if on_tasks:
        on_tasks(tasks)
    context = TaskContext(datasets=list(protocol.datasets))
    outcomes = []
    for task in tasks:
        try:
            outcome = run_task_loop(
                task, context, gateway=gateway, coder=config.profile("code-generator"),
                judge=config.profile("judge"), sandbox=sandbox, tasks_root=tasks_root,
                cap=config.max_code_repair_iterations,
            )
        except SandboxUnavailableError as exc:
            raise StageError("programming", f"sandbox unavailable: {exc}") from exc
        except EvaluationError as exc:
            raise StageError("programming", f"task {task.id}: {exc}") from exc
        outcomes.append(outcome)
        if on_outcome:
            on_outcome(outcome)
        if outcome.status == "success":
            rev = f"{task.id}/rev{outcome.final_revision}/outputs"
            files = [f"{rev}/{o['path']}" for o in outcome.final.outputs]
            context.predecessors.append({"id": task.id, "description": task.description, "outputs": files})
    return ProgrammingOutcome(tasks, outcomes)

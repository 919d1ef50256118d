from researchflow.programming.loop import (
    ProgrammingOutcome,
    TaskContext,
    TaskOutcome,
    Termination,
    generate_code,
    refine_or_terminate,
    run_programming,
    run_task_loop,
)
from researchflow.programming.sandbox import (
    INTERPRETERS,
    CodeArtifact,
    DockerSandbox,
    ExecutionResult,
    LocalSandbox,
    make_sandbox,
)
from researchflow.programming.tasks import TASKS_JSON_SCHEMA, DryLabTask, extract_tasks

__all__ = [
    "INTERPRETERS",
    "TASKS_JSON_SCHEMA",
    "CodeArtifact",
    "DockerSandbox",
    "DryLabTask",
    "ExecutionResult",
    "LocalSandbox",
    "ProgrammingOutcome",
    "TaskContext",
    "TaskOutcome",
    "Termination",
    "extract_tasks",
    "generate_code",
    "make_sandbox",
    "refine_or_terminate",
    "run_programming",
    "run_task_loop",
]

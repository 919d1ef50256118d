"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations


class ResearchFlowError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ResearchFlowError):
    """Configuration document failed validation.

    ``violations`` holds every problem found as ``(field_path, message)`` pairs,
    not just the first one.
    """

    def __init__(self, violations: list[tuple[str, str]]):
        self.violations = list(violations)
        lines = "; ".join(f"{path}: {msg}" for path, msg in self.violations)
        super().__init__(f"invalid configuration: {lines}")


class ValidationError(ResearchFlowError, ValueError):
    """A domain object or operation precondition was violated."""


# --- LLM gateway -----------------------------------------------------------


class BackendError(ResearchFlowError):
    pass


class TransientBackendError(BackendError):
    """Retryable failure (timeout, HTTP 429, HTTP 5xx)."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class BackendUnavailableError(BackendError):
    """Retries exhausted."""


class CredentialError(BackendError):
    """Authentication rejected; never retried."""


class ScriptUnderflowError(BackendError):
    def __init__(self, role: str, step_key: str):
        self.role = role
        self.step_key = step_key
        super().__init__(f"scripted backend has no response left for ({role}, {step_key})")


class MalformedOutputError(ResearchFlowError):
    """The model kept producing output that does not satisfy the schema."""

    def __init__(self, message: str, raw_text: str, attempts: int):
        super().__init__(message)
        self.raw_text = raw_text
        self.attempts = attempts


# --- search -----------------------------------------------------------------


class QueryGenerationError(ResearchFlowError):
    pass


class QuerySyntaxError(ValidationError):
    pass


class RetrievalError(ResearchFlowError):
    def __init__(self, database: str, message: str):
        self.database = database
        super().__init__(f"{database}: {message}")


class ScoringError(ResearchFlowError):
    pass


class AvailabilityError(ResearchFlowError):
    """No structured full text can be obtained for a paper."""


class DocumentError(ResearchFlowError):
    """Full-text XML could not be parsed."""


class NotFoundError(ResearchFlowError):
    pass


# --- literature / design ------------------------------------------------------


class ReportGenerationError(ResearchFlowError):
    pass


class AnalysisError(ResearchFlowError):
    pass


class ReferenceLookupError(ResearchFlowError, KeyError):
    def __str__(self) -> str:  # KeyError would repr() the message
        return str(self.args[0]) if self.args else ""


class DesignError(ResearchFlowError):
    pass


# --- programming ----------------------------------------------------------------


class TaskExtractionError(ResearchFlowError):
    pass


class CodeGenerationError(ResearchFlowError):
    pass


class SandboxUnavailableError(ResearchFlowError):
    """The isolation runtime cannot be reached; infrastructure, not a task failure."""


# --- evaluation --------------------------------------------------------------------


class UndefinedMetricError(ResearchFlowError, ArithmeticError):
    pass


class UndefinedStatisticError(ResearchFlowError, ArithmeticError):
    pass


class EvaluationError(ResearchFlowError):
    def __init__(self, message: str, failed: dict | None = None, completed: dict | None = None):
        super().__init__(message)
        self.failed = failed or {}
        self.completed = completed or {}


# --- pipeline ----------------------------------------------------------------------


class StageError(ResearchFlowError):
    """A stage cannot produce usable output; the run stops here."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


class UnrecoverableRunError(ResearchFlowError):
    pass

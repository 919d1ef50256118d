"""Protocol quality formulas and program success metrics."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from researchflow.errors import UndefinedMetricError, ValidationError

# Reference mean of qualifying sentences per step.
REFERENCE_STEP_LENGTH = 4.42
BP_FLOOR = 0.5
MIN_WORDS_EXCLUSIVE = 6

_SENTENCE_END = re.compile(r"[.!?]")


def count_step_length(text: str) -> int:
    """Number of sentences with more than six whitespace-delimited words.

    Sentences end at ``.``, ``!``, ``?`` or the end of the text, which keeps
    short step titles out of the count.
    """
    return sum(1 for s in _SENTENCE_END.split(text) if len(s.split()) > MIN_WORDS_EXCLUSIVE)


def brevity_penalty(l_steps: float, reference: float = REFERENCE_STEP_LENGTH) -> float:
    if l_steps < 0:
        raise ValidationError("l_steps must be >= 0")
    if l_steps > reference:
        return 1.0
    if l_steps == 0:
        return BP_FLOOR
    return max(math.exp(1.0 - reference / l_steps), BP_FLOOR)


@dataclass(frozen=True)
class ProtocolStats:
    sections: int
    n_ts: int
    n_as: int
    n_cs: int
    n_rs: int
    l_steps: float
    reference_length: float = REFERENCE_STEP_LENGTH

    def __post_init__(self):
        if self.sections < 1:
            raise ValidationError("a protocol has at least one section")
        if not 0 <= self.n_cs <= self.n_ts:
            raise ValidationError("need 0 <= n_cs <= n_ts")
        if not 0 <= self.n_rs <= self.n_ts:
            raise ValidationError("need 0 <= n_rs <= n_ts")
        if self.n_as < 0 or self.l_steps < 0:
            raise ValidationError("n_as and l_steps must be >= 0")


def completeness(stats: ProtocolStats) -> float:
    denom = stats.n_ts + stats.n_as
    if denom == 0:
        raise UndefinedMetricError("completeness undefined: no existing or added steps")
    return stats.n_ts / denom


def correctness(stats: ProtocolStats) -> float:
    if stats.n_ts == 0:
        raise UndefinedMetricError("correctness undefined for a protocol without steps")
    return brevity_penalty(stats.l_steps, stats.reference_length) * stats.n_cs / stats.n_ts


def logical_soundness(stats: ProtocolStats) -> float:
    if stats.n_ts == 0:
        raise UndefinedMetricError("logical soundness undefined for a protocol without steps")
    return stats.n_rs / stats.n_ts


@dataclass(frozen=True)
class MetricScores:
    completeness: float
    detail: float
    correctness: float
    logical_soundness: float
    structural_soundness: float

    def __post_init__(self):
        for name in ("completeness", "detail", "correctness", "logical_soundness", "structural_soundness"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name}={v} outside [0, 1]")

    @property
    def overall(self) -> float:
        return (
            self.completeness
            + self.detail
            + self.correctness
            + self.logical_soundness
            + self.structural_soundness
        )

    def to_dict(self) -> dict:
        return {
            "completeness": self.completeness,
            "detail": self.detail,
            "correctness": self.correctness,
            "logical_soundness": self.logical_soundness,
            "structural_soundness": self.structural_soundness,
            "overall": self.overall,
        }


def execution_success_rate(outcomes) -> float:
    """Percentage of tasks whose code eventually ran successfully."""
    outcomes = list(outcomes)
    if not outcomes:
        raise UndefinedMetricError("success rate undefined for zero tasks")
    ok = sum(1 for o in outcomes if o.status == "success")
    return 100.0 * ok / len(outcomes)

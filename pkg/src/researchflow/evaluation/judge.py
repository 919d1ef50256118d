"""LLM-as-judge scoring: protocol quality, error severity, report quality."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from statistics import fmean

from researchflow.design import Protocol
from researchflow.errors import EvaluationError, MalformedOutputError, ValidationError
from researchflow.evaluation.metrics import (
    REFERENCE_STEP_LENGTH,
    MetricScores,
    ProtocolStats,
    completeness,
    correctness,
    count_step_length,
    logical_soundness,
)
from researchflow.llm.gateway import Gateway
from researchflow.llm.prompts import ERROR_LEVEL_RUBRIC, REPORT_QUALITY_RUBRIC, dump

log = logging.getLogger(__name__)

DIMENSIONS = ("completeness", "detail", "correctness", "logical_soundness", "structural_soundness")


@dataclass(frozen=True)
class StepJudgement:
    section: int  # 1-based
    step: int  # 1-based within the section
    correct: bool
    reasonable_order: bool
    rationale: str = ""


@dataclass(frozen=True)
class SectionJudgement:
    section: int
    added_steps: tuple[str, ...] = ()

    def __post_init__(self):
        if any(not s.strip() for s in self.added_steps):
            raise ValidationError(f"section {self.section}: empty added step")


@dataclass
class ProtocolJudgement:
    scores: MetricScores
    stats: ProtocolStats
    steps: list[StepJudgement]
    sections: list[SectionJudgement]
    rationales: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        s = self.stats
        return {
            "scores": self.scores.to_dict(),
            "stats": {
                "sections": s.sections, "n_ts": s.n_ts, "n_as": s.n_as, "n_cs": s.n_cs, "n_rs": s.n_rs,
                "l_steps": s.l_steps, "reference_length": s.reference_length,
            },
            "steps": [
                {"section": j.section, "step": j.step, "correct": j.correct,
                 "reasonable_order": j.reasonable_order, "rationale": j.rationale}
                for j in self.steps
            ],
            "sections": [{"section": j.section, "added_steps": list(j.added_steps)} for j in self.sections],
            "rationales": dict(self.rationales),
        }


def indexed_protocol(protocol: Protocol) -> dict:
    """Protocol JSON with explicit 1-based section and step indices for judges."""
    return {
        "request": protocol.request.to_dict(),
        "sections": [
            {
                "section": si,
                "heading": sec.heading,
                "purpose": sec.plan.purpose,
                "steps": [
                    {"step": ti, "entry": st.entry, "text": st.text} for ti, st in enumerate(sec.steps, 1)
                ],
            }
            for si, sec in enumerate(protocol.sections, 1)
        ],
    }


def protocol_step_length(protocol: Protocol) -> float:
    """Mean qualifying-sentence count over every step of the protocol."""
    counts = [count_step_length(st.text) for sec in protocol.sections for st in sec.steps]
    return fmean(counts) if counts else 0.0


def _step_schema(flag: str) -> dict:
    return {
        "type": "object",
        "required": ["steps"],
        "properties": {
            "steps": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["section", "step", flag],
                    "properties": {
                        "section": {"type": "integer"},
                        "step": {"type": "integer"},
                        flag: {"type": "boolean"},
                        "rationale": {"type": "string"},
                    },
                },
            }
        },
    }


_ADDED_SCHEMA = {
    "type": "object",
    "required": ["sections"],
    "properties": {
        "sections": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["section", "added_steps"],
                "properties": {
                    "section": {"type": "integer"},
                    "added_steps": {"type": "array", "items": {"type": "string", "minLength": 1}},
                },
            },
        }
    },
}

_UNIT_SCORE_SCHEMA = {
    "type": "object",
    "required": ["score"],
    "properties": {"score": {"type": "number", "minimum": 0, "maximum": 1}, "rationale": {"type": "string"}},
}


def _check_cover(items, expected: list[tuple], key):
    got = [key(i) for i in items]
    if sorted(got) != sorted(expected) or len(set(got)) != len(got):
        missing = sorted(set(expected) - set(got))
        extra = sorted(set(got) - set(expected))
        raise ValueError(f"judgements must cover each item exactly once (missing {missing}, unexpected {extra})")


class ProtocolJudge:
    def __init__(self, gateway: Gateway, profile, protocol: Protocol):
        self.gateway = gateway
        self.profile = profile
        self.protocol = protocol
        self.body = dump(indexed_protocol(protocol))
        self.step_refs = [(si, ti) for si, sec in enumerate(protocol.sections, 1) for ti in range(1, len(sec.steps) + 1)]
        self.section_refs = [(si,) for si in range(1, len(protocol.sections) + 1)]

    def _ask(self, instruction: str, schema: dict, key: str, check=None) -> dict:
        prompt = f"Protocol (JSON):\n{self.body}\n\n{instruction}"
        return self.gateway.complete_structured(
            self.profile, [{"role": "user", "content": prompt}], schema, step_key=key, check=check
        ).value

    def added_steps(self) -> list[SectionJudgement]:
        value = self._ask(
            "For every section, list the steps that are missing and would need to be added for the "
            "section to be complete. Use an empty list when nothing is missing.\n\n"
            'Reply as {"sections": [{"section": 1, "added_steps": ["..."]}]}.',
            _ADDED_SCHEMA, "evaluation.completeness",
            lambda v: _check_cover(v["sections"], self.section_refs, lambda i: (i["section"],)),
        )
        by = {i["section"]: i for i in value["sections"]}
        return [SectionJudgement(si, tuple(by[si]["added_steps"])) for (si,) in self.section_refs]

    def _step_flags(self, flag: str, instruction: str, key: str) -> dict[tuple[int, int], tuple[bool, str]]:
        value = self._ask(
            f"{instruction}\n\n"
            f'Reply as {{"steps": [{{"section": 1, "step": 1, "{flag}": true, "rationale": "..."}}]}}.',
            _step_schema(flag), key,
            lambda v: _check_cover(v["steps"], self.step_refs, lambda i: (i["section"], i["step"])),
        )
        return {(i["section"], i["step"]): (i[flag], i.get("rationale", "")) for i in value["steps"]}

    def correct_steps(self):
        return self._step_flags(
            "correct", "Judge every step: is it free from factual errors?", "evaluation.correctness"
        )

    def reasonable_steps(self):
        return self._step_flags(
            "reasonable",
            "Judge every step: is it placed in a reasonable order relative to the other steps?",
            "evaluation.logical_soundness",
        )

    def detail_score(self) -> tuple[float, str]:
        value = self._ask(
            "Rate the level of detail of the protocol from 0 (no detail) to 1 (fully detailed).\n\n"
            'Reply as {"score": <0..1>, "rationale": "..."}.',
            _UNIT_SCORE_SCHEMA, "evaluation.detail",
        )
        return float(value["score"]), value.get("rationale", "")

    def structure_score(self) -> tuple[float, str]:
        value = self._ask(
            "Rate how structurally sound the protocol's organization is, from 0 (completely "
            "unsound) to 1 (perfectly sound).\n\n"
            'Reply as {"score": <0..1>, "rationale": "..."}.',
            _UNIT_SCORE_SCHEMA, "evaluation.structural_soundness",
        )
        return float(value["score"]), value.get("rationale", "")


def judge_protocol(gateway: Gateway, profile, protocol: Protocol, *, max_workers: int = 5) -> ProtocolJudgement:
    """Score a protocol on five dimensions, each from its own judge call."""
    protocol.validate()
    judge = ProtocolJudge(gateway, profile, protocol)
    calls = {
        "completeness": judge.added_steps,
        "correctness": judge.correct_steps,
        "logical_soundness": judge.reasonable_steps,
        "detail": judge.detail_score,
        "structural_soundness": judge.structure_score,
    }
    results, failed = {}, {}
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {name: pool.submit(fn) for name, fn in calls.items()}
        for name, fut in futures.items():
            try:
                results[name] = fut.result()
            except MalformedOutputError as exc:
                failed[name] = str(exc)
    if failed:
        raise EvaluationError(
            f"judge failed on {sorted(failed)}", failed=failed, completed={k: results[k] for k in sorted(results)}
        )

    sections = results["completeness"]
    correct = results["correctness"]
    reasonable = results["logical_soundness"]
    steps = [
        StepJudgement(
            si, ti, correct[(si, ti)][0], reasonable[(si, ti)][0],
            "; ".join(r for r in (correct[(si, ti)][1], reasonable[(si, ti)][1]) if r),
        )
        for si, ti in judge.step_refs
    ]
    stats = ProtocolStats(
        sections=len(protocol.sections),
        n_ts=len(steps),
        n_as=sum(len(s.added_steps) for s in sections),
        n_cs=sum(1 for s in steps if s.correct),
        n_rs=sum(1 for s in steps if s.reasonable_order),
        l_steps=protocol_step_length(protocol),
        reference_length=REFERENCE_STEP_LENGTH,
    )
    detail, detail_why = results["detail"]
    structure, structure_why = results["structural_soundness"]
    scores = MetricScores(
        completeness=completeness(stats),
        detail=detail,
        correctness=correctness(stats),
        logical_soundness=logical_soundness(stats),
        structural_soundness=structure,
    )
    return ProtocolJudgement(scores, stats, steps, sections, {"detail": detail_why, "structural_soundness": structure_why})


# -- error levels ------------------------------------------------------------------

ERROR_LEVEL_SCHEMA = {
    "type": "object",
    "required": ["level", "rationale"],
    "properties": {"level": {"type": "integer", "minimum": 1, "maximum": 4}, "rationale": {"type": "string"}},
}

STDERR_TAIL = 4000


@dataclass(frozen=True)
class ErrorGrade:
    level: int
    rationale: str

    def __post_init__(self):
        if self.level not in (1, 2, 3, 4):
            raise ValidationError(f"error level {self.level} outside 1..4")


def grade_error(gateway: Gateway, profile, task_description: str, source: str, stderr: str, *, step_key: str) -> ErrorGrade:
    """Assign a 1..4 severity to code that never ran successfully."""
    prompt = (
        f"Error-level rubric:\n{ERROR_LEVEL_RUBRIC}\n\nTask: {task_description}\n\n"
        f"Final code:\n{source}\n\nError output:\n{stderr[-STDERR_TAIL:]}\n\n"
        'Assign exactly one level. Reply as {"level": <1..4>, "rationale": "..."}.'
    )
    try:
        value = gateway.complete_structured(
            profile, [{"role": "user", "content": prompt}], ERROR_LEVEL_SCHEMA, step_key=step_key
        ).value
    except MalformedOutputError as exc:
        raise EvaluationError(f"error grading failed: {exc}", failed={"error_level": str(exc)}) from exc
    return ErrorGrade(value["level"], value["rationale"])


# -- report quality ------------------------------------------------------------------

REPORT_DIMENSIONS = ("logical_soundness", "detail_level", "consistency", "readability")

REPORT_QUALITY_SCHEMA = {
    "type": "object",
    "required": list(REPORT_DIMENSIONS),
    "properties": {
        **{d: {"type": "integer", "minimum": 1, "maximum": 5} for d in REPORT_DIMENSIONS},
        "rationale": {"type": "string"},
    },
}


@dataclass(frozen=True)
class ReportQuality:
    logical_soundness: int
    detail_level: int
    consistency: int
    readability: int
    rationale: str = ""

    @property
    def mean(self) -> float:
        return (self.logical_soundness + self.detail_level + self.consistency + self.readability) / 4

    def to_dict(self) -> dict:
        return {d: getattr(self, d) for d in REPORT_DIMENSIONS} | {"mean": self.mean, "rationale": self.rationale}


def judge_report_quality(gateway: Gateway, profile, report, document) -> ReportQuality:
    report.validate()
    prompt = (
        f"Rubric:\n{REPORT_QUALITY_RUBRIC}\n\nOriginal paper:\n{document.render()}\n\n"
        f"Experimental report:\n{report.render()}\n\n"
        "Score the report on each dimension with an integer from 1 to 5.\n\n"
        'Reply as {"logical_soundness": n, "detail_level": n, "consistency": n, "readability": n, '
        '"rationale": "..."}.'
    )
    try:
        value = gateway.complete_structured(
            profile, [{"role": "user", "content": prompt}], REPORT_QUALITY_SCHEMA,
            step_key=f"evaluation.report_quality.{report.paper_id}",
        ).value
    except MalformedOutputError as exc:
        raise EvaluationError(f"report judging failed: {exc}", failed={"report_quality": str(exc)}) from exc
    return ReportQuality(*(value[d] for d in REPORT_DIMENSIONS), value.get("rationale", ""))

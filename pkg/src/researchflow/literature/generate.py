"""Report generation and analysis agents.

Each paper gets its headings first; outline, steps, details and results are
then produced per heading, in parallel, and merged back in heading order.
Every layer goes through the reviewer before the next one starts.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from researchflow.errors import AnalysisError, MalformedOutputError, ReportGenerationError, ValidationError
from researchflow.literature.document import StructuredDocument
from researchflow.literature.report import (
    GRADES,
    ExperimentalReport,
    OutlineEntry,
    ReportAnalysis,
    ReportSection,
    SectionAnalysis,
    Step,
)
from researchflow.llm.gateway import Gateway
from researchflow.llm.prompts import dump, request_block
from researchflow.request import ResearchRequest
from researchflow.review import Reviewer, ReviewOutcome, reviewed_completion

log = logging.getLogger(__name__)

_STRINGS = {"type": "array", "items": {"type": "string", "minLength": 1}}

HEADINGS_SCHEMA = {
    "type": "object",
    "required": ["headings"],
    "properties": {"headings": dict(_STRINGS, minItems=1)},
}

OUTLINE_SCHEMA = {
    "type": "object",
    "required": ["heading", "entries"],
    "properties": {
        "heading": {"type": "string"},
        "entries": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["title"],
                "properties": {"title": {"type": "string", "minLength": 1}},
            },
        },
    },
}

STEPS_SCHEMA = {
    "type": "object",
    "required": ["steps"],
    "properties": {
        "steps": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["entry", "text"],
                "properties": {"entry": {"type": "string"}, "text": {"type": "string", "minLength": 1}},
            },
        },
        "non_experimental": _STRINGS,
    },
}


def _mapping_schema(key: str, allow_empty: bool) -> dict:
    return {
        "type": "object",
        "required": [key],
        "properties": {
            key: {
                "type": "object",
                "additionalProperties": {"type": "string", **({} if allow_empty else {"minLength": 1})},
            }
        },
    }


DETAILS_SCHEMA = _mapping_schema("details", allow_empty=False)
RESULTS_SCHEMA = _mapping_schema("results", allow_empty=True)

ANALYSIS_SCHEMA = {
    "type": "object",
    "required": ["heading", "grade", "suggestions"],
    "properties": {
        "heading": {"type": "string"},
        "grade": {"enum": list(GRADES)},
        "suggestions": {"type": "string"},
    },
}


def check_headings(value):
    headings = [h.strip() for h in value["headings"]]
    if any(not h for h in headings):
        raise ValueError("headings must be non-empty")
    if len(set(headings)) != len(headings):
        raise ValueError("headings must be unique")


def _check_heading_echo(expected: str):
    def check(value):
        if value["heading"].strip() != expected:
            raise ValueError(f"unknown heading {value['heading']!r}; expected {expected!r}")

    return check


def check_outline(expected_heading: str):
    echo = _check_heading_echo(expected_heading)

    def check(value):
        echo(value)
        titles = [e["title"].strip() for e in value["entries"]]
        if len(set(titles)) != len(titles):
            raise ValueError("outline entry titles must be unique within a heading")

    return check


def check_steps(entries: list[str]):
    def check(value):
        known = set(entries)
        flagged = set(value.get("non_experimental", []))
        unknown = flagged - known
        if unknown:
            raise ValueError(f"non_experimental names unknown entries: {sorted(unknown)}")
        counts = {e: 0 for e in entries}
        for step in value["steps"]:
            if step["entry"] not in known:
                raise ValueError(f"step mapped to unknown outline entry {step['entry']!r}")
            counts[step["entry"]] += 1
        for entry, n in counts.items():
            if n == 0 and entry not in flagged:
                raise ValueError(f"entry {entry!r} has no steps; list it under non_experimental if it has none")
            if n and entry in flagged:
                raise ValueError(f"entry {entry!r} is marked non_experimental but has steps")

    return check


def check_step_mapping(key: str, step_ids: list[str]):
    def check(value):
        got = set(value[key])
        missing = [s for s in step_ids if s not in got]
        extra = sorted(got - set(step_ids))
        if missing:
            raise ValueError(f"{key} missing for steps {missing}")
        if extra:
            raise ValueError(f"{key} given for unknown steps {extra}")

    return check


@dataclass
class GeneratedReport:
    report: ExperimentalReport
    transcripts: dict[str, dict] = field(default_factory=dict)
    unapproved: list[str] = field(default_factory=list)


class ReportWriter:
    """Runs the five report layers and the per-section analysis for one paper at a time."""

    def __init__(
        self,
        gateway: Gateway,
        writer_profile,
        analyst_profile,
        reviewer: Reviewer,
        *,
        max_rounds: int = 6,
        max_workers: int = 4,
    ):
        self.gateway = gateway
        self.writer_profile = writer_profile
        self.analyst_profile = analyst_profile
        self.reviewer = reviewer
        self.max_rounds = max_rounds
        self.max_workers = max_workers

    def _reviewed(self, profile, prompt, schema, key, what, doc_text, check, sink: dict):
        outcome: ReviewOutcome = reviewed_completion(
            self.gateway,
            profile,
            self.reviewer,
            [{"role": "user", "content": prompt}],
            schema,
            step_key=key,
            review_context=f"Task: {what}\n\nSource material:\n{doc_text}",
            max_rounds=self.max_rounds,
            check=check,
        )
        sink[key] = {"rounds": outcome.rounds, "approved": outcome.approved, "transcript": outcome.transcript}
        return outcome.artifact

    # -- the five layers ------------------------------------------------------

    def generate_headings(self, doc: StructuredDocument, sink=None) -> list[str]:
        sink = sink if sink is not None else {}
        prompt = (
            "Read the paper and propose the first-level headings of an experimental report "
            "that covers all of its experiments.\n\n"
            f"Paper {doc.paper_id}:\n{doc.render()}\n\n"
            'Reply as {"headings": ["...", ...]}.'
        )
        key = f"literature.{doc.paper_id}.headings"
        value = self._reviewed(
            self.writer_profile, prompt, HEADINGS_SCHEMA, key, "first-level headings", doc.render(), check_headings, sink
        )
        return [h.strip() for h in value["headings"]]

    def develop_outline(self, doc: StructuredDocument, heading: str, index: int, sink=None) -> list[str]:
        sink = sink if sink is not None else {}
        prompt = (
            f"Experimental report heading: {heading}\n\n"
            "Write the outline entries that belong under this heading, based on the paper.\n\n"
            f"Paper {doc.paper_id}:\n{doc.render()}\n\n"
            f'Reply as {{"heading": "{heading}", "entries": [{{"title": "..."}}, ...]}}.'
        )
        key = f"literature.{doc.paper_id}.h{index}.outline"
        value = self._reviewed(
            self.writer_profile, prompt, OUTLINE_SCHEMA, key, f"outline for '{heading}'", doc.render(),
            check_outline(heading), sink,
        )
        return [e["title"].strip() for e in value["entries"]]

    def extract_steps(self, doc, heading, index, entries: list[str], sink=None) -> list[OutlineEntry]:
        sink = sink if sink is not None else {}
        prompt = (
            f"Experimental report heading: {heading}\nOutline entries:\n{dump(entries)}\n\n"
            "Extract the experimental steps from the paper, in order, and attach each to one "
            "outline entry. Entries that describe no experiment (pure background) go in "
            "non_experimental instead.\n\n"
            f"Paper {doc.paper_id}:\n{doc.render()}\n\n"
            'Reply as {"steps": [{"entry": "...", "text": "..."}], "non_experimental": []}.'
        )
        key = f"literature.{doc.paper_id}.h{index}.steps"
        value = self._reviewed(
            self.writer_profile, prompt, STEPS_SCHEMA, key, f"steps for '{heading}'", doc.render(),
            check_steps(entries), sink,
        )
        flagged = set(value.get("non_experimental", []))
        out = []
        for ei, title in enumerate(entries, start=1):
            texts = [s["text"].strip() for s in value["steps"] if s["entry"] == title]
            steps = [Step(f"{ei}.{si}", t) for si, t in enumerate(texts, start=1)]
            out.append(OutlineEntry(title, steps, non_experimental=title in flagged))
        return out

    def _fill(self, doc, heading, index, outline: list[OutlineEntry], layer: str, sink) -> dict[str, str]:
        steps = [s for e in outline for s in e.steps]
        if not steps:
            return {}
        ids = [s.id for s in steps]
        listing = "\n".join(f"[{s.id}] {s.text}" for s in steps)
        if layer == "details":
            ask = (
                "For every step, extract from the paper the detailed information needed to "
                "reproduce it (tools, parameters, thresholds, data). If the paper gives none, say so."
            )
            schema = DETAILS_SCHEMA
        else:
            ask = "For every step, extract the results the paper reports for it; use an empty string if none."
            schema = RESULTS_SCHEMA
        prompt = (
            f"Experimental report heading: {heading}\nSteps:\n{listing}\n\n{ask}\n\n"
            f"Paper {doc.paper_id}:\n{doc.render()}\n\n"
            f'Reply as {{"{layer}": {{"<step id>": "...", ...}}}}.'
        )
        key = f"literature.{doc.paper_id}.h{index}.{layer}"
        value = self._reviewed(
            self.writer_profile, prompt, schema, key, f"step {layer} for '{heading}'", doc.render(),
            check_step_mapping(layer, ids), sink,
        )
        return {k: v.strip() for k, v in value[layer].items()}

    def extract_details(self, doc, heading, index, outline, sink=None) -> dict[str, str]:
        return self._fill(doc, heading, index, outline, "details", sink if sink is not None else {})

    def extract_results(self, doc, heading, index, outline, sink=None) -> dict[str, str]:
        return self._fill(doc, heading, index, outline, "results", sink if sink is not None else {})

    def _section(self, doc, heading, index) -> tuple[ReportSection, dict]:
        sink: dict = {}
        entries = self.develop_outline(doc, heading, index, sink)
        outline = self.extract_steps(doc, heading, index, entries, sink)
        details = self.extract_details(doc, heading, index, outline, sink)
        results = self.extract_results(doc, heading, index, outline, sink)
        for entry in outline:
            for step in entry.steps:
                step.details = details.get(step.id, "")
                step.results = results.get(step.id, "")
        return ReportSection(heading, outline), sink

    def generate_report(self, doc: StructuredDocument) -> GeneratedReport:
        transcripts: dict = {}
        try:
            headings = self.generate_headings(doc, transcripts)
            with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
                futures = [pool.submit(self._section, doc, h, i) for i, h in enumerate(headings, start=1)]
                parts = [f.result() for f in futures]
        except (MalformedOutputError, ValidationError) as exc:
            raise ReportGenerationError(f"{doc.paper_id}: {exc}") from exc
        sections = []
        for section, sink in parts:
            sections.append(section)
            transcripts.update(sink)
        report = ExperimentalReport(doc.paper_id, sections)
        try:
            report.validate()
        except Exception as exc:
            raise ReportGenerationError(f"{doc.paper_id}: {exc}") from exc
        unapproved = sorted(k for k, rec in transcripts.items() if not rec["approved"])
        return GeneratedReport(report, dict(sorted(transcripts.items())), unapproved)

    # -- analysis -------------------------------------------------------------

    def analyze_report(
        self, report: ExperimentalReport, request: ResearchRequest, sink: dict | None = None
    ) -> ReportAnalysis:
        """Grade each section's referability, one section per call."""
        sink = sink if sink is not None else {}
        headings = [s.heading for s in report.sections]
        entries = []
        try:
            for i, section in enumerate(report.sections, start=1):
                prompt = (
                    f"{request_block(request)}\n\nReport {report.paper_id} has sections:\n{dump(headings)}\n\n"
                    f"Section under review:\n{section.render()}\n\n"
                    "Grade how useful this section is as a reference for designing experiments "
                    "for the request (high, medium or low), and suggest what to reuse and what "
                    "to modify.\n\n"
                    f'Reply as {{"heading": "{section.heading}", "grade": "high|medium|low", "suggestions": "..."}}.'
                )
                key = f"literature.{report.paper_id}.analysis.h{i}"
                value = self._reviewed(
                    self.analyst_profile, prompt, ANALYSIS_SCHEMA, key, f"referability analysis of '{section.heading}'",
                    f"{request_block(request)}\n\n{section.render()}", _check_heading_echo(section.heading), sink,
                )
                entries.append(SectionAnalysis(section.heading, value["grade"], value["suggestions"].strip()))
        except (MalformedOutputError, ValidationError) as exc:
            raise AnalysisError(f"{report.paper_id}: {exc}") from exc
        analysis = ReportAnalysis(report.paper_id, entries)
        analysis.validate_against(report)
        return analysis

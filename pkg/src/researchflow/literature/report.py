"""Experimental reports: headings -> outline -> steps -> details -> results."""

from __future__ import annotations

from dataclasses import dataclass, field

import jsonschema

from researchflow.errors import ValidationError

REPORT_SCHEMA_VERSION = 1

REPORT_JSON_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["schema_version", "paper_id", "sections"],
    "properties": {
        "schema_version": {"const": REPORT_SCHEMA_VERSION},
        "paper_id": {"type": "string", "minLength": 1},
        "sections": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["heading", "outline"],
                "properties": {
                    "heading": {"type": "string", "minLength": 1},
                    "outline": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "required": ["title", "non_experimental", "steps"],
                            "properties": {
                                "title": {"type": "string", "minLength": 1},
                                "non_experimental": {"type": "boolean"},
                                "steps": {
                                    "type": "array",
                                    "items": {
                                        "type": "object",
                                        "required": ["id", "text", "details", "results"],
                                        "properties": {
                                            "id": {"type": "string", "minLength": 1},
                                            "text": {"type": "string", "minLength": 1},
                                            "details": {"type": "string"},
                                            "results": {"type": "string"},
                                        },
                                    },
                                },
                            },
                        },
                    },
                },
            },
        },
    },
}


@dataclass
class Step:
    id: str
    text: str
    details: str = ""
    results: str = ""


@dataclass
class OutlineEntry:
    title: str
    steps: list[Step] = field(default_factory=list)
    non_experimental: bool = False


@dataclass
class ReportSection:
    heading: str
    outline: list[OutlineEntry]

    def render(self) -> str:
        lines = [f"# {self.heading}"]
        for entry in self.outline:
            lines.append(f"## {entry.title}" + (" (non-experimental)" if entry.non_experimental else ""))
            for step in entry.steps:
                lines.append(f"- [{step.id}] {step.text}")
                if step.details:
                    lines.append(f"  Details: {step.details}")
                if step.results:
                    lines.append(f"  Results: {step.results}")
        return "\n".join(lines)

    def steps(self) -> list[Step]:
        return [s for e in self.outline for s in e.steps]


@dataclass
class ExperimentalReport:
    paper_id: str
    sections: list[ReportSection]

    def validate(self):
        if not self.sections:
            raise ValidationError(f"{self.paper_id}: report has no sections")
        headings = [s.heading for s in self.sections]
        if len(set(headings)) != len(headings):
            raise ValidationError(f"{self.paper_id}: duplicate section headings")
        for sec in self.sections:
            if not sec.outline:
                raise ValidationError(f"{self.paper_id}/{sec.heading}: no outline entries")
            ids = [s.id for s in sec.steps()]
            if len(set(ids)) != len(ids):
                raise ValidationError(f"{self.paper_id}/{sec.heading}: duplicate step ids")
            for entry in sec.outline:
                if not entry.steps and not entry.non_experimental:
                    raise ValidationError(
                        f"{self.paper_id}/{sec.heading}/{entry.title}: no steps and not marked non-experimental"
                    )
        jsonschema.validate(self.to_dict(), REPORT_JSON_SCHEMA)

    def section(self, heading: str) -> ReportSection:
        for s in self.sections:
            if s.heading == heading:
                return s
        raise KeyError(heading)

    def render(self) -> str:
        return "\n\n".join(s.render() for s in self.sections)

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "paper_id": self.paper_id,
            "sections": [
                {
                    "heading": s.heading,
                    "outline": [
                        {
                            "title": e.title,
                            "non_experimental": e.non_experimental,
                            "steps": [
                                {"id": st.id, "text": st.text, "details": st.details, "results": st.results}
                                for st in e.steps
                            ],
                        }
                        for e in s.outline
                    ],
                }
                for s in self.sections
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentalReport":
        jsonschema.validate(data, REPORT_JSON_SCHEMA)
        return cls(
            data["paper_id"],
            [
                ReportSection(
                    s["heading"],
                    [
                        OutlineEntry(
                            e["title"],
                            [Step(st["id"], st["text"], st["details"], st["results"]) for st in e["steps"]],
                            e["non_experimental"],
                        )
                        for e in s["outline"]
                    ],
                )
                for s in data["sections"]
            ],
        )


GRADES = ("high", "medium", "low")


@dataclass
class SectionAnalysis:
    heading: str
    grade: str
    suggestions: str

    def __post_init__(self):
        if self.grade not in GRADES:
            raise ValidationError(f"unknown referability grade {self.grade!r}")


@dataclass
class ReportAnalysis:
    paper_id: str
    entries: list[SectionAnalysis]

    def validate_against(self, report: ExperimentalReport):
        if [e.heading for e in self.entries] != [s.heading for s in report.sections]:
            raise ValidationError(f"{self.paper_id}: analysis must cover each report section exactly once")

    def to_dict(self) -> dict:
        return {
            "paper_id": self.paper_id,
            "entries": [{"heading": e.heading, "grade": e.grade, "suggestions": e.suggestions} for e in self.entries],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReportAnalysis":
        return cls(data["paper_id"], [SectionAnalysis(**e) for e in data["entries"]])

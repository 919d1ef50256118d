"""Protocol design in three passes: section plans, outline, implementation details.

Every pass is grounded in the reference corpus through ``"<paper>/<heading>"``
tags (or ``novel``). Details are written one section at a time, and each
approved section is summarized so later sections can build on it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import jsonschema

from researchflow.config import PipelineConfig
from researchflow.errors import DesignError, MalformedOutputError, StageError, ValidationError
from researchflow.literature.corpus import NOVEL, ReferenceCorpus
from researchflow.llm.gateway import Gateway
from researchflow.llm.prompts import dump, request_block
from researchflow.request import ResearchRequest
from researchflow.review import Reviewer, reviewed_completion
from researchflow.search.records import DatasetRecord

log = logging.getLogger(__name__)

PROTOCOL_SCHEMA_VERSION = 1
SUMMARY_WORD_LIMIT = 200


@dataclass
class SectionPlan:
    heading: str
    purpose: str
    design_reason: str
    references: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "heading": self.heading,
            "purpose": self.purpose,
            "design_reason": self.design_reason,
            "references": list(self.references),
        }


@dataclass
class OutlineItem:
    title: str
    references: list[str] = field(default_factory=list)


@dataclass
class ProtocolOutline:
    sections: list[tuple[str, list[OutlineItem]]]

    def entries(self, heading: str) -> list[OutlineItem]:
        for h, items in self.sections:
            if h == heading:
                return items
        raise KeyError(heading)

    def to_dict(self) -> dict:
        return {
            "sections": [
                {"heading": h, "entries": [{"title": i.title, "references": list(i.references)} for i in items]}
                for h, items in self.sections
            ]
        }


@dataclass
class ProtocolStep:
    entry: str
    text: str


@dataclass
class ProtocolSection:
    plan: SectionPlan
    entries: list[OutlineItem]
    steps: list[ProtocolStep]
    summary: str = ""

    @property
    def heading(self) -> str:
        return self.plan.heading


PROTOCOL_JSON_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["schema_version", "request", "sections", "datasets"],
    "properties": {
        "schema_version": {"const": PROTOCOL_SCHEMA_VERSION},
        "request": {
            "type": "object",
            "required": ["objective", "conditions", "requirements"],
        },
        "datasets": {"type": "array", "items": {"type": "string"}},
        "sections": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["heading", "rationale", "outline", "steps", "summary"],
                "properties": {
                    "heading": {"type": "string", "minLength": 1},
                    "rationale": {
                        "type": "object",
                        "required": ["purpose", "design_reason", "references"],
                    },
                    "outline": {
                        "type": "array",
                        "minItems": 1,
                        "items": {"type": "object", "required": ["title", "references"]},
                    },
                    "steps": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "required": ["entry", "text"],
                            "properties": {"text": {"type": "string", "minLength": 1}},
                        },
                    },
                    "summary": {"type": "string"},
                },
            },
        },
    },
}


@dataclass
class Protocol:
    request: ResearchRequest
    sections: list[ProtocolSection]
    datasets: list[str] = field(default_factory=list)

    def validate(self, corpus: ReferenceCorpus | None = None):
        if not self.sections:
            raise ValidationError("protocol has no sections")
        for sec in self.sections:
            titles = [i.title for i in sec.entries]
            realized = {s.entry for s in sec.steps}
            for t in titles:
                if t not in realized:
                    raise ValidationError(f"{sec.heading}: outline entry {t!r} has no step")
            for s in sec.steps:
                if s.entry not in titles:
                    raise ValidationError(f"{sec.heading}: step attached to unknown entry {s.entry!r}")
                if not s.text.strip():
                    raise ValidationError(f"{sec.heading}: empty step")
            if corpus is not None:
                tags = list(sec.plan.references) + [t for i in sec.entries for t in i.references]
                for tag in tags:
                    if not corpus.resolves(tag):
                        raise ValidationError(f"{sec.heading}: dangling reference {tag!r}")
        jsonschema.validate(self.to_dict(), PROTOCOL_JSON_SCHEMA)

    def all_steps(self) -> list[tuple[int, int, ProtocolStep]]:
        return [(si, ti, st) for si, sec in enumerate(self.sections, 1) for ti, st in enumerate(sec.steps, 1)]

    def to_dict(self) -> dict:
        return {
            "schema_version": PROTOCOL_SCHEMA_VERSION,
            "request": self.request.to_dict(),
            "datasets": list(self.datasets),
            "sections": [
                {
                    "heading": s.heading,
                    "rationale": {
                        "purpose": s.plan.purpose,
                        "design_reason": s.plan.design_reason,
                        "references": list(s.plan.references),
                    },
                    "outline": [{"title": i.title, "references": list(i.references)} for i in s.entries],
                    "steps": [{"entry": st.entry, "text": st.text} for st in s.steps],
                    "summary": s.summary,
                }
                for s in self.sections
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Protocol":
        jsonschema.validate(data, PROTOCOL_JSON_SCHEMA)
        sections = []
        for s in data["sections"]:
            r = s["rationale"]
            sections.append(
                ProtocolSection(
                    SectionPlan(s["heading"], r["purpose"], r["design_reason"], list(r["references"])),
                    [OutlineItem(i["title"], list(i["references"])) for i in s["outline"]],
                    [ProtocolStep(st["entry"], st["text"]) for st in s["steps"]],
                    s.get("summary", ""),
                )
            )
        return cls(ResearchRequest.from_dict(data["request"]), sections, list(data.get("datasets", [])))

    def to_markdown(self) -> str:
        lines = ["# Experimental protocol", "", f"**Objective:** {self.request.objective}"]
        if self.request.conditions:
            lines.append(f"**Conditions:** {self.request.conditions}")
        if self.request.requirements:
            lines.append(f"**Requirements:** {self.request.requirements}")
        if self.datasets:
            lines.append(f"**Datasets:** {', '.join(self.datasets)}")
        for si, sec in enumerate(self.sections, 1):
            lines += ["", f"## {si}. {sec.heading}", ""]
            lines.append(f"*Purpose:* {sec.plan.purpose}")
            lines.append(f"*Design reason:* {sec.plan.design_reason}")
            lines.append(f"*References:* {', '.join(sec.plan.references) or 'none'}")
            for ei, item in enumerate(sec.entries, 1):
                lines += ["", f"### {si}.{ei} {item.title}", ""]
                steps = [st for st in sec.steps if st.entry == item.title]
                for ti, st in enumerate(steps, 1):
                    lines.append(f"{ti}. {st.text}")
        return "\n".join(lines) + "\n"


# -- agent calls ---------------------------------------------------------------

_TAGS = {"type": "array", "items": {"type": "string", "minLength": 1}}

PLANS_SCHEMA = {
    "type": "object",
    "required": ["sections"],
    "properties": {
        "sections": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["heading", "purpose", "design_reason", "references"],
                "properties": {
                    "heading": {"type": "string", "minLength": 1},
                    "purpose": {"type": "string", "minLength": 1},
                    "design_reason": {"type": "string", "minLength": 1},
                    "references": _TAGS,
                },
            },
        }
    },
}

OUTLINE_SCHEMA = {
    "type": "object",
    "required": ["sections"],
    "properties": {
        "sections": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["heading", "entries"],
                "properties": {
                    "heading": {"type": "string"},
                    "entries": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "required": ["title", "references"],
                            "properties": {"title": {"type": "string", "minLength": 1}, "references": _TAGS},
                        },
                    },
                },
            },
        }
    },
}

DETAILS_SCHEMA = {
    "type": "object",
    "required": ["steps"],
    "properties": {
        "steps": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["entry", "text"],
                "properties": {"entry": {"type": "string"}, "text": {"type": "string", "minLength": 1}},
            },
        }
    },
}

SUMMARY_SCHEMA = {
    "type": "object",
    "required": ["summary"],
    "properties": {"summary": {"type": "string", "minLength": 1}},
}


def _check_tags(corpus: ReferenceCorpus, tags, where: str):
    for tag in tags:
        if not corpus.resolves(tag):
            raise ValueError(f"{where}: reference {tag!r} is not a corpus tag and not '{NOVEL}'")


def retrieve_references(tags: list[str], corpus: ReferenceCorpus):
    return corpus.retrieve(tags)


def _corpus_listing(corpus: ReferenceCorpus, with_content: bool = False) -> str:
    blocks = []
    for e in corpus.entries:
        text = f"[{e.key}] {e.heading}\nAnalysis: {e.analysis}"
        if with_content:
            text += f"\n{e.content}"
        blocks.append(text)
    return "\n\n".join(blocks)


class Designer:
    def __init__(self, gateway: Gateway, designer_profile, reviewer: Reviewer, *, max_rounds: int = 6):
        self.gateway = gateway
        self.profile = designer_profile
        self.reviewer = reviewer
        self.max_rounds = max_rounds
        self.transcripts: dict[str, dict] = {}

    def _reviewed(self, prompt: str, schema, key: str, what: str, check):
        outcome = reviewed_completion(
            self.gateway,
            self.profile,
            self.reviewer,
            [{"role": "user", "content": prompt}],
            schema,
            step_key=key,
            review_context=f"Task: {what}",
            max_rounds=self.max_rounds,
            check=check,
        )
        self.transcripts[key] = {"rounds": outcome.rounds, "approved": outcome.approved, "transcript": outcome.transcript}
        return outcome.artifact

    def design_headings(self, corpus: ReferenceCorpus, request: ResearchRequest) -> list[SectionPlan]:
        if not len(corpus):
            raise DesignError("cannot design without reference material")
        prompt = (
            f"{request_block(request)}\n\nReference sections from related experimental reports, "
            f"with their analyses:\n\n{_corpus_listing(corpus)}\n\n"
            "Design the first-level sections of a new dry-lab protocol for the request. For each "
            "section give its purpose, the design reason, and the reference tags it draws on "
            f"(use '{NOVEL}' for parts without a reference).\n\n"
            'Reply as {"sections": [{"heading": "...", "purpose": "...", "design_reason": "...", '
            '"references": ["<paper>/<heading>", ...]}]}.'
        )

        def check(value):
            headings = [s["heading"].strip() for s in value["sections"]]
            if len(set(headings)) != len(headings):
                raise ValueError("section headings must be unique")
            for s in value["sections"]:
                _check_tags(corpus, s["references"], s["heading"])

        try:
            value = self._reviewed(prompt, PLANS_SCHEMA, "design.headings", "protocol section headings", check)
        except MalformedOutputError as exc:
            raise DesignError(f"section plans: {exc}") from exc
        return [
            SectionPlan(s["heading"].strip(), s["purpose"].strip(), s["design_reason"].strip(), list(s["references"]))
            for s in value["sections"]
        ]

    def design_outline(self, plans: list[SectionPlan], corpus: ReferenceCorpus, request=None) -> ProtocolOutline:
        headings = [p.heading for p in plans]
        referenced = [corpus.lookup(t) for t in dict.fromkeys(t for p in plans for t in p.references) if t != NOVEL]
        refs = "\n\n".join(f"[{e.key}]\n{e.content}\nAnalysis: {e.analysis}" for e in referenced) or "(none)"
        prompt = (
            (f"{request_block(request)}\n\n" if request is not None else "")
            + f"Protocol sections:\n{dump([p.to_dict() for p in plans])}\n\n"
            f"Outlines of the referenced report sections:\n{refs}\n\n"
            "Write a brief outline for every protocol section, with the reference tags each "
            "entry follows.\n\n"
            'Reply as {"sections": [{"heading": "...", "entries": [{"title": "...", "references": [...]}]}]}.'
        )

        def check(value):
            seen = {}
            for s in value["sections"]:
                h = s["heading"].strip()
                if h not in headings:
                    raise ValueError(f"outline section {h!r} is not one of the planned headings")
                if h in seen:
                    raise ValueError(f"outline section {h!r} appears twice")
                seen[h] = s
                titles = [e["title"].strip() for e in s["entries"]]
                if len(set(titles)) != len(titles):
                    raise ValueError(f"{h}: outline entry titles must be unique")
                for e in s["entries"]:
                    _check_tags(corpus, e["references"], f"{h}/{e['title']}")
            missing = [h for h in headings if h not in seen]
            if missing:
                raise ValueError(f"no outline entries for sections {missing}")

        try:
            value = self._reviewed(prompt, OUTLINE_SCHEMA, "design.outline", "protocol outline", check)
        except MalformedOutputError as exc:
            raise DesignError(f"outline: {exc}") from exc
        by_heading = {s["heading"].strip(): s for s in value["sections"]}
        return ProtocolOutline(
            [
                (h, [OutlineItem(e["title"].strip(), list(e["references"])) for e in by_heading[h]["entries"]])
                for h in headings
            ]
        )

    def summarize(self, index: int, section: ProtocolSection) -> str:
        body = "\n".join(f"- {st.text}" for st in section.steps)
        prompt = (
            f"Summarize protocol section {index} '{section.heading}' in at most "
            f"{SUMMARY_WORD_LIMIT} words so later sections can build on it.\n\n{body}\n\n"
            'Reply as {"summary": "..."}.'
        )

        def check(value):
            if len(value["summary"].split()) > SUMMARY_WORD_LIMIT:
                raise ValueError(f"summary exceeds {SUMMARY_WORD_LIMIT} words")

        result = self.gateway.complete_structured(
            self.profile, [{"role": "user", "content": prompt}], SUMMARY_SCHEMA,
            step_key=f"design.summary.s{index}", check=check,
        )
        return result.value["summary"].strip()

    def design_details(
        self,
        plans: list[SectionPlan],
        outline: ProtocolOutline,
        corpus: ReferenceCorpus,
        datasets: list[DatasetRecord],
        request: ResearchRequest,
    ) -> Protocol:
        dataset_text = "\n".join(f"- {d.accession}: {d.title}. {d.description}" for d in datasets) or "(none)"
        outline_text = dump(outline.to_dict())
        sections: list[ProtocolSection] = []
        for index, plan in enumerate(plans, start=1):
            items = outline.entries(plan.heading)
            tags = list(plan.references) + [t for i in items for t in i.references]
            refs = retrieve_references(tags, corpus)
            ref_text = "\n\n".join(f"[{e.key}]\n{e.content}\nAnalysis: {e.analysis}" for e in refs) or "(none)"
            summaries = "\n".join(f"Section {i} ({s.heading}): {s.summary}" for i, s in enumerate(sections, 1))
            entry_titles = [i.title for i in items]
            prompt = (
                f"{request_block(request)}\n\nFull protocol outline:\n{outline_text}\n\n"
                f"Summaries of the sections written so far:\n{summaries or '(none yet)'}\n\n"
                f"Useful datasets:\n{dataset_text}\n\n"
                f"Reference material for this section:\n{ref_text}\n\n"
                f"Now write section {index} '{plan.heading}' (purpose: {plan.purpose}). Give complete, "
                f"specific implementation steps for each outline entry: {dump(entry_titles)}.\n\n"
                'Reply as {"steps": [{"entry": "<outline entry title>", "text": "..."}]}.'
            )

            def check(value, entry_titles=entry_titles):
                realized = set()
                for st in value["steps"]:
                    if st["entry"] not in entry_titles:
                        raise ValueError(f"step attached to unknown outline entry {st['entry']!r}")
                    if not st["text"].strip():
                        raise ValueError("step text must be non-empty")
                    realized.add(st["entry"])
                missing = [t for t in entry_titles if t not in realized]
                if missing:
                    raise ValueError(f"outline entries without steps: {missing}")

            try:
                value = self._reviewed(
                    prompt, DETAILS_SCHEMA, f"design.details.s{index}", f"implementation details of '{plan.heading}'", check
                )
                steps = [ProtocolStep(st["entry"], st["text"].strip()) for st in value["steps"]]
                section = ProtocolSection(plan, items, steps)
                section.summary = self.summarize(index, section)
            except MalformedOutputError as exc:
                raise DesignError(f"section {index} '{plan.heading}': {exc}") from exc
            sections.append(section)
        protocol = Protocol(request, sections, [d.accession for d in datasets])
        protocol.validate(corpus)
        return protocol


@dataclass
class DesignOutcome:
    plans: list[SectionPlan]
    outline: ProtocolOutline
    protocol: Protocol
    transcripts: dict[str, dict]
    warnings: list[str]


def run_design(
    gateway: Gateway,
    request: ResearchRequest,
    config: PipelineConfig,
    corpus: ReferenceCorpus,
    useful_datasets: list[DatasetRecord],
) -> DesignOutcome:
    designer = Designer(
        gateway, config.profile("designer"), Reviewer(gateway, config.profile("reviewer")),
        max_rounds=config.max_review_rounds,
    )
    try:
        plans = designer.design_headings(corpus, request)
        outline = designer.design_outline(plans, corpus, request)
        protocol = designer.design_details(plans, outline, corpus, useful_datasets, request)
    except (DesignError, ValidationError) as exc:
        raise StageError("design", str(exc)) from exc
    warnings = [
        f"{k}: accepted without reviewer approval after {v['rounds']} rounds"
        for k, v in designer.transcripts.items()
        if not v["approved"]
    ]
    return DesignOutcome(plans, outline, protocol, dict(sorted(designer.transcripts.items())), warnings)

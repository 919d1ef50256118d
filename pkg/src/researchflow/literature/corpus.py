from __future__ import annotations

from dataclasses import dataclass

from researchflow.errors import ReferenceLookupError, ValidationError
from researchflow.literature.report import ExperimentalReport, ReportAnalysis
from researchflow.search.records import ACCESSION_IN_TEXT

NOVEL = "novel"


def extract_dataset_ids(source: ExperimentalReport | str) -> list[str]:
    """GEO accessions mentioned in a report (or text), first occurrence order, no repeats."""
    text = source if isinstance(source, str) else source.render()
    seen: dict[str, None] = {}
    for m in ACCESSION_IN_TEXT.finditer(text):
        seen.setdefault(m.group(0), None)
    return list(seen)


@dataclass(frozen=True)
class CorpusEntry:
    paper_id: str
    heading: str
    content: str
    analysis: str
    grade: str = "high"

    @property
    def key(self) -> str:
        return f"{self.paper_id}/{self.heading}"

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "paper_id": self.paper_id,
            "heading": self.heading,
            "grade": self.grade,
            "content": self.content,
            "analysis": self.analysis,
        }


class ReferenceCorpus:
    """High-referability report sections, looked up by ``"<paper>/<heading>"`` tags."""

    def __init__(self, entries: list[CorpusEntry] | None = None):
        self.entries: list[CorpusEntry] = []
        self._index: dict[str, CorpusEntry] = {}
        for e in entries or []:
            self.add(e)

    def add(self, entry: CorpusEntry):
        if entry.grade != "high":
            raise ValidationError(f"{entry.key}: only high-referability sections enter the corpus")
        if entry.key in self._index:
            raise ValidationError(f"duplicate corpus key {entry.key!r}")
        self.entries.append(entry)
        self._index[entry.key] = entry

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key: str) -> bool:
        return key in self._index

    def keys(self) -> list[str]:
        return [e.key for e in self.entries]

    def lookup(self, key: str) -> CorpusEntry:
        try:
            return self._index[key]
        except KeyError:
            raise ReferenceLookupError(f"no corpus entry tagged {key!r}") from None

    def resolves(self, tag: str) -> bool:
        return tag == NOVEL or tag in self._index

    def retrieve(self, tags: list[str]) -> list[CorpusEntry]:
        """Entries for ``tags`` in order; ``novel`` adds nothing, repeats are dropped."""
        out, seen = [], set()
        for tag in tags:
            if tag == NOVEL:
                continue
            entry = self.lookup(tag)
            if entry.key not in seen:
                seen.add(entry.key)
                out.append(entry)
        return out

    def to_index(self) -> dict:
        return {"entries": [{"key": e.key, "paper_id": e.paper_id, "heading": e.heading} for e in self.entries]}


def build_reference_corpus(
    reports: list[ExperimentalReport], analyses: list[ReportAnalysis]
) -> ReferenceCorpus:
    by_paper = {a.paper_id: a for a in analyses}
    corpus = ReferenceCorpus()
    for report in reports:
        analysis = by_paper.get(report.paper_id)
        if analysis is None:
            raise ValidationError(f"no analysis for report {report.paper_id}")
        analysis.validate_against(report)
        for section, entry in zip(report.sections, analysis.entries):
            if entry.grade == "high":
                corpus.add(CorpusEntry(report.paper_id, section.heading, section.render(), entry.suggestions))
    return corpus

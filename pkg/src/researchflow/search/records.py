from __future__ import annotations

import re
from dataclasses import asdict, dataclass, replace
from typing import Iterable

from researchflow.errors import ValidationError

ACCESSION = re.compile(r"(?:GSE|GDS|GSM|GPL)[0-9]+")
# Accessions glued to letters or digits on either side are not accessions.
ACCESSION_IN_TEXT = re.compile(r"(?<![A-Za-z0-9])(?:GSE|GDS|GSM|GPL)[0-9]+(?![A-Za-z0-9])")

FROM_SEARCH = "from-search"
FROM_REPORT = "from-report"


def is_accession(text: str) -> bool:
    return bool(ACCESSION.fullmatch(text))


@dataclass
class PaperRecord:
    source: str  # "pubmed" | "pmc"
    identifier: str  # "PMC<n>" when a PMC copy exists, else "PMID<n>"
    title: str
    abstract: str
    score: int | None = None
    fulltext_available: bool = False
    pmid: str = ""
    pmcid: str = ""

    def __post_init__(self):
        if self.score is not None and self.score not in (1, 2, 3, 4, 5):
            raise ValidationError(f"{self.identifier}: helpfulness score {self.score} outside 1..5")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PaperRecord":
        return cls(**data)


@dataclass
class DatasetRecord:
    accession: str
    title: str
    description: str
    usable: bool | None = None
    provenance: str = FROM_SEARCH

    def __post_init__(self):
        if not is_accession(self.accession):
            raise ValidationError(f"malformed accession {self.accession!r}")
        if self.provenance not in (FROM_SEARCH, FROM_REPORT):
            raise ValidationError(f"unknown provenance {self.provenance!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetRecord":
        return cls(**data)


def merge_papers(*batches: Iterable[PaperRecord]) -> list[PaperRecord]:
    """Union of paper batches keyed by identifier; first occurrence wins."""
    seen: dict[str, PaperRecord] = {}
    for batch in batches:
        for rec in batch:
            prior = seen.get(rec.identifier)
            if prior is None:
                seen[rec.identifier] = rec
            else:
                seen[rec.identifier] = replace(
                    prior,
                    fulltext_available=prior.fulltext_available or rec.fulltext_available,
                    pmid=prior.pmid or rec.pmid,
                    pmcid=prior.pmcid or rec.pmcid,
                    abstract=prior.abstract or rec.abstract,
                )
    return list(seen.values())


def merge_datasets(*batches: Iterable[DatasetRecord]) -> list[DatasetRecord]:
    """Union keyed by accession; an already collected record is kept as is."""
    seen: dict[str, DatasetRecord] = {}
    for batch in batches:
        for rec in batch:
            seen.setdefault(rec.accession, rec)
    return list(seen.values())


def paper_order(rec: PaperRecord):
    return (-(rec.score or 0), rec.identifier)

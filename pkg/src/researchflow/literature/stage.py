from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from researchflow.config import PipelineConfig
from researchflow.errors import (
    AnalysisError,
    NotFoundError,
    ReportGenerationError,
    RetrievalError,
    ScoringError,
    StageError,
    ValidationError,
)
from researchflow.literature.corpus import ReferenceCorpus, build_reference_corpus, extract_dataset_ids
from researchflow.literature.document import StructuredDocument
from researchflow.literature.generate import ReportWriter
from researchflow.literature.report import ExperimentalReport, ReportAnalysis
from researchflow.llm.gateway import Gateway
from researchflow.request import ResearchRequest
from researchflow.review import Reviewer
from researchflow.search.agents import score_datasets
from researchflow.search.eutils import EUtilsClient
from researchflow.search.records import DatasetRecord, merge_datasets

log = logging.getLogger(__name__)


@dataclass
class LiteratureOutcome:
    reports: list[ExperimentalReport]
    analyses: list[ReportAnalysis]
    corpus: ReferenceCorpus
    datasets: list[DatasetRecord]  # search-stage datasets plus those found in reports
    transcripts: dict[str, dict] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def useful_datasets(self) -> list[DatasetRecord]:
        return [d for d in self.datasets if d.usable]


def run_literature(
    gateway: Gateway,
    client: EUtilsClient,
    request: ResearchRequest,
    config: PipelineConfig,
    documents: list[StructuredDocument],
    datasets: list[DatasetRecord],
) -> LiteratureOutcome:
    writer = ReportWriter(
        gateway,
        config.profile("report-generator"),
        config.profile("analyst"),
        Reviewer(gateway, config.profile("reviewer")),
        max_rounds=config.max_review_rounds,
        max_workers=config.max_workers,
    )
    warnings: list[str] = []

    def process(doc: StructuredDocument):
        try:
            generated = writer.generate_report(doc)
            sink: dict = {}
            analysis = writer.analyze_report(generated.report, request, sink)
        except (ReportGenerationError, AnalysisError) as exc:
            log.warning("skipping paper %s: %s", doc.paper_id, exc)
            return None, f"paper {doc.paper_id} skipped: {exc}"
        transcripts = dict(generated.transcripts)
        transcripts.update(sink)
        return (generated.report, analysis, transcripts), None

    with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
        results = list(pool.map(process, documents))

    reports, analyses, transcripts = [], [], {}
    for done, warning in results:
        if warning:
            warnings.append(warning)
            continue
        report, analysis, tr = done
        reports.append(report)
        analyses.append(analysis)
        transcripts.update(tr)
        for key, rec in tr.items():
            if not rec["approved"]:
                warnings.append(f"{key}: accepted without reviewer approval after {rec['rounds']} rounds")
    if not reports:
        raise StageError("literature", "no paper could be turned into a report")

    corpus = build_reference_corpus(reports, analyses)
    if not len(corpus):
        raise StageError("literature", "no report section was graded highly referable")

    # Datasets named in reports are looked up directly and judged like searched ones.
    known = {d.accession for d in datasets}
    mentioned: list[str] = []
    for report in reports:
        for acc in extract_dataset_ids(report):
            if acc not in known and acc not in mentioned:
                mentioned.append(acc)
    fetched = []
    for acc in mentioned:
        try:
            fetched.append(client.fetch_dataset_by_id(acc))
        except (NotFoundError, RetrievalError, ValidationError) as exc:
            warnings.append(f"dataset {acc} not fetched: {exc}")
            log.warning("dataset %s not fetched: %s", acc, exc)
    scored = score_datasets(
        gateway, config.profile("filter"), fetched, request, stage="literature", max_workers=config.max_workers
    )
    all_datasets = merge_datasets(datasets, scored)
    return LiteratureOutcome(reports, analyses, corpus, all_datasets, dict(sorted(transcripts.items())), warnings)

"""LLM-driven parts of the search stage: query generation and filtration."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

from researchflow.config import PipelineConfig
from researchflow.errors import (
    AvailabilityError,
    DocumentError,
    MalformedOutputError,
    QueryGenerationError,
    QuerySyntaxError,
    ScoringError,
    StageError,
    ValidationError,
)
from researchflow.literature.document import StructuredDocument
from researchflow.llm.gateway import Gateway, extract_json
from researchflow.llm.prompts import HELPFULNESS_RUBRIC, request_block
from researchflow.request import ResearchRequest
from researchflow.search.eutils import LITERATURE_DBS, EUtilsClient
from researchflow.search.query import BooleanQuery
from researchflow.search.records import (
    DatasetRecord,
    PaperRecord,
    merge_datasets,
    merge_papers,
    paper_order,
)

log = logging.getLogger(__name__)

USEFUL = "useful"
NOT_USEFUL = "not-useful"


def generate_queries(gateway: Gateway, profile, request: ResearchRequest, n: int = 5) -> list[BooleanQuery]:
    if n < 1:
        raise ValidationError("need at least one query")
    schema = {
        "type": "object",
        "required": ["queries"],
        "properties": {
            "queries": {"type": "array", "items": {"type": "string", "minLength": 1}, "minItems": n, "maxItems": n}
        },
    }

    def check(value):
        for i, text in enumerate(value["queries"]):
            try:
                BooleanQuery.parse(text)
            except QuerySyntaxError as exc:
                raise ValueError(f"query {i + 1} is not valid Boolean syntax: {exc}") from exc

    messages = [
        {
            "role": "user",
            "content": (
                f"{request_block(request)}\n\n"
                f"Write exactly {n} Boolean queries for PubMed, PMC and GEO. "
                'Reply as {"queries": ["...", ...]}.'
            ),
        }
    ]
    try:
        result = gateway.complete_structured(profile, messages, schema, step_key="search.query_gen", check=check)
    except MalformedOutputError as exc:
        raise QueryGenerationError(f"query generator produced no valid queries: {exc}") from exc
    return [BooleanQuery.parse(q) for q in result.value["queries"]]


SCORE_SCHEMA = {
    "type": "object",
    "required": ["score"],
    "properties": {"score": {"type": "integer", "minimum": 1, "maximum": 5}, "reason": {"type": "string"}},
}


def score_paper(gateway: Gateway, profile, paper: PaperRecord, request: ResearchRequest) -> int:
    if not paper.title.strip() or not paper.abstract.strip():
        raise ValidationError(f"{paper.identifier}: scoring needs a title and an abstract")
    messages = [
        {
            "role": "user",
            "content": (
                f"{request_block(request)}\n\nRate how helpful this paper is for the request "
                f"using only its title and abstract.\n\nRubric:\n{HELPFULNESS_RUBRIC}\n\n"
                f"Title: {paper.title}\nAbstract: {paper.abstract}\n\n"
                'Reply as {"score": <1-5>, "reason": "..."}.'
            ),
        }
    ]
    try:
        result = gateway.complete_structured(
            profile, messages, SCORE_SCHEMA, step_key=f"search.score_paper.{paper.identifier}"
        )
    except MalformedOutputError as exc:
        raise ScoringError(f"{paper.identifier}: {exc}") from exc
    return result.value["score"]


def filter_papers(papers: list[PaperRecord], threshold: int = 4) -> list[PaperRecord]:
    """Keep papers scoring at least ``threshold``, best first."""
    for p in papers:
        if p.score is None:
            raise ValidationError(f"{p.identifier} has not been scored")
    return sorted((p for p in papers if p.score >= threshold), key=paper_order)


def _parse_usability(text: str):
    word = text.strip().strip('."').lower().replace(" ", "-")
    if word in (USEFUL, NOT_USEFUL):
        return {"usability": word}
    return extract_json(text)


USABILITY_SCHEMA = {
    "type": "object",
    "required": ["usability"],
    "properties": {"usability": {"enum": [USEFUL, NOT_USEFUL]}, "reason": {"type": "string"}},
}


def score_dataset(
    gateway: Gateway, profile, dataset: DatasetRecord, request: ResearchRequest, *, stage: str = "search"
) -> bool:
    if not dataset.description.strip():
        raise ValidationError(f"{dataset.accession}: dataset has no description to judge")
    messages = [
        {
            "role": "user",
            "content": (
                f"{request_block(request)}\n\nIs this dataset usable for the request? Judge from "
                f"its description only.\n\nAccession: {dataset.accession}\nTitle: {dataset.title}\n"
                f"Description: {dataset.description}\n\n"
                'Reply as {"usability": "useful" | "not-useful", "reason": "..."}.'
            ),
        }
    ]
    try:
        result = gateway.complete_structured(
            profile,
            messages,
            USABILITY_SCHEMA,
            step_key=f"{stage}.score_dataset.{dataset.accession}",
            parse=_parse_usability,
        )
    except MalformedOutputError as exc:
        raise ScoringError(f"{dataset.accession}: {exc}") from exc
    return result.value["usability"] == USEFUL


def score_datasets(gateway, profile, datasets, request, *, stage="search", max_workers=4) -> list[DatasetRecord]:
    """Score every dataset; ones that cannot be judged are dropped with a warning."""

    def one(ds):
        try:
            return replace(ds, usable=score_dataset(gateway, profile, ds, request, stage=stage))
        except (ScoringError, ValidationError) as exc:
            log.warning("skipping dataset %s: %s", ds.accession, exc)
            return None

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        scored = list(pool.map(one, datasets))
    return [d for d in scored if d is not None]


@dataclass
class SearchOutcome:
    queries: list[BooleanQuery]
    papers: list[PaperRecord]  # every retrieved paper, scored where possible
    kept: list[PaperRecord]
    documents: dict[str, StructuredDocument]
    datasets: list[DatasetRecord]  # every scored dataset
    warnings: list[str] = field(default_factory=list)

    @property
    def useful_datasets(self) -> list[DatasetRecord]:
        return [d for d in self.datasets if d.usable]


def run_search(
    gateway: Gateway, client: EUtilsClient, request: ResearchRequest, config: PipelineConfig
) -> SearchOutcome:
    """Query generation, retrieval, filtration and full-text download."""
    warnings: list[str] = []
    queries = generate_queries(gateway, config.profile("query-generator"), request, config.queries_per_request)
    cap = config.max_results_per_query_per_db

    jobs = [(q, db) for q in queries for db in LITERATURE_DBS + ("gds",)]

    def retrieve(job):
        q, db = job
        if db == "gds":
            return client.search_datasets(q, cap)
        return client.search_literature(q, db, cap)

    with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
        batches = list(pool.map(retrieve, jobs))
    papers = merge_papers(*(b for (q, db), b in zip(jobs, batches) if db != "gds"))
    datasets = merge_datasets(*(b for (q, db), b in zip(jobs, batches) if db == "gds"))
    papers.sort(key=lambda p: p.identifier)
    datasets.sort(key=lambda d: d.accession)

    filter_profile = config.profile("filter")

    def score(p):
        try:
            return replace(p, score=score_paper(gateway, filter_profile, p, request))
        except (ScoringError, ValidationError) as exc:
            warnings.append(f"paper {p.identifier} not scored: {exc}")
            log.warning("paper %s not scored: %s", p.identifier, exc)
            return p

    with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
        papers = list(pool.map(score, papers))
    scored = [p for p in papers if p.score is not None]
    candidates = filter_papers(scored, config.paper_keep_threshold)

    documents: dict[str, StructuredDocument] = {}
    kept = []
    for p in candidates:
        try:
            documents[p.identifier] = client.fetch_fulltext(p)
            kept.append(p)
        except (AvailabilityError, DocumentError, ValidationError) as exc:
            warnings.append(f"paper {p.identifier} dropped: {exc}")
            log.warning("paper %s dropped: %s", p.identifier, exc)

    if not kept:
        raise StageError("search", "no paper survived filtration with full text available")
    datasets = score_datasets(gateway, filter_profile, datasets, request, max_workers=config.max_workers)
    papers.sort(key=paper_order)
    warnings.sort()  # appended from worker threads
    return SearchOutcome(queries, papers, kept, documents, datasets, warnings)

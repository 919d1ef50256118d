from researchflow.search.agents import (
    SearchOutcome,
    filter_papers,
    generate_queries,
    run_search,
    score_dataset,
    score_paper,
)
from researchflow.search.eutils import EUtilsClient, RateLimiter, parse_jats_document
from researchflow.search.query import BooleanQuery, Group, Term
from researchflow.search.records import DatasetRecord, PaperRecord

__all__ = [
    "BooleanQuery",
    "DatasetRecord",
    "EUtilsClient",
    "Group",
    "PaperRecord",
    "RateLimiter",
    "SearchOutcome",
    "Term",
    "filter_papers",
    "generate_queries",
    "parse_jats_document",
    "run_search",
    "score_dataset",
    "score_paper",
]

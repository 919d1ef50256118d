from researchflow.literature.corpus import (
    NOVEL,
    CorpusEntry,
    ReferenceCorpus,
    build_reference_corpus,
    extract_dataset_ids,
)
from researchflow.literature.document import Block, StructuredDocument
from researchflow.literature.report import (
    ExperimentalReport,
    OutlineEntry,
    ReportAnalysis,
    ReportSection,
    SectionAnalysis,
    Step,
)

__all__ = [
    "NOVEL",
    "Block",
    "CorpusEntry",
    "ExperimentalReport",
    "OutlineEntry",
    "ReferenceCorpus",
    "ReportAnalysis",
    "ReportSection",
    "SectionAnalysis",
    "Step",
    "StructuredDocument",
    "build_reference_corpus",
    "extract_dataset_ids",
]

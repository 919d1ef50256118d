"""Staged LLM-agent pipeline from a research request to executed analysis code."""

from researchflow.config import PipelineConfig, load_config, validate_config
from researchflow.pipeline import RunArtifacts, resume_run, run_pipeline
from researchflow.request import ResearchRequest

__all__ = [
    "PipelineConfig",
    "ResearchRequest",
    "RunArtifacts",
    "load_config",
    "resume_run",
    "run_pipeline",
    "validate_config",
]

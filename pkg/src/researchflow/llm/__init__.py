from researchflow.llm.backends import OpenAIBackend, RawCompletion, ScriptedBackend
from researchflow.llm.gateway import (
    Completion,
    Gateway,
    StructuredCompletion,
    Telemetry,
    extract_json,
)


def scripted_backend(script) -> ScriptedBackend:
    return ScriptedBackend(script)


__all__ = [
    "Completion",
    "Gateway",
    "OpenAIBackend",
    "RawCompletion",
    "ScriptedBackend",
    "StructuredCompletion",
    "Telemetry",
    "extract_json",
    "scripted_backend",
]

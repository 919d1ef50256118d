"""Uniform completion interface with retries, structured output repair and telemetry."""

from __future__ import annotations

import json
import logging
import re
import threading
import time
from collections import defaultdict
from dataclasses import dataclass
from typing import Any, Callable

import jsonschema

from researchflow.config import AgentProfile
from researchflow.errors import (
    BackendUnavailableError,
    MalformedOutputError,
    TransientBackendError,
    ValidationError,
)
from researchflow.llm.backends import Backend
from researchflow.llm.prompts import system_prompt

log = logging.getLogger(__name__)

MAX_PARSE_ATTEMPTS = 3


@dataclass
class Completion:
    text: str
    prompt_tokens: int
    completion_tokens: int
    backend: str
    attempt: int

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValidationError("token counts must be non-negative")


@dataclass
class StructuredCompletion:
    value: Any
    attempts: int
    raw_text: str


class Telemetry:
    """Thread-safe token accounting, grouped by pipeline stage."""

    def __init__(self):
        self._lock = threading.Lock()
        self.calls: list[dict] = []
        self._stages: dict[str, dict[str, int]] = defaultdict(
            lambda: {"calls": 0, "prompt_tokens": 0, "completion_tokens": 0}
        )

    def record(self, step_key: str, role: str, prompt_tokens: int, completion_tokens: int):
        stage = step_key.split(".", 1)[0]
        with self._lock:
            self.calls.append(
                {
                    "stage": stage,
                    "step_key": step_key,
                    "role": role,
                    "prompt_tokens": prompt_tokens,
                    "completion_tokens": completion_tokens,
                }
            )
            totals = self._stages[stage]
            totals["calls"] += 1
            totals["prompt_tokens"] += prompt_tokens
            totals["completion_tokens"] += completion_tokens

    def stage_totals(self) -> dict[str, dict[str, int]]:
        with self._lock:
            return {k: dict(v) for k, v in sorted(self._stages.items())}

    def load(self, stages: dict[str, dict[str, int]]):
        """Seed totals from a persisted run so resumed runs keep counting."""
        with self._lock:
            for stage, totals in stages.items():
                self._stages[stage] = {
                    "calls": int(totals.get("calls", 0)),
                    "prompt_tokens": int(totals.get("prompt_tokens", 0)),
                    "completion_tokens": int(totals.get("completion_tokens", 0)),
                }


_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def extract_json(text: str) -> Any:
    """Pull the first JSON value out of a model reply.

    Accepts bare JSON, fenced code blocks, and JSON surrounded by prose.
    """
    stripped = text.strip()
    fenced = _FENCE.search(stripped)
    if fenced:
        stripped = fenced.group(1).strip()
    try:
        return json.loads(stripped)
    except json.JSONDecodeError:
        pass
    decoder = json.JSONDecoder()
    for i, ch in enumerate(stripped):
        if ch in "{[":
            try:
                value, _ = decoder.raw_decode(stripped, i)
                return value
            except json.JSONDecodeError:
                continue
    raise ValueError("reply contains no JSON value")


class Gateway:
    """Wraps a backend with the retry policy, system prompts and token telemetry.

    Transient failures are retried with ``backoff_base * 2**k`` second delays,
    up to ``max_attempts`` requests in total. Credential failures surface
    immediately.
    """

    def __init__(
        self,
        backend: Backend,
        *,
        max_attempts: int = 5,
        backoff_base: float = 1.0,
        sleep: Callable[[float], None] = time.sleep,
        telemetry: Telemetry | None = None,
    ):
        self.backend = backend
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self._sleep = sleep
        self.telemetry = telemetry or Telemetry()

    def complete(self, profile: AgentProfile, messages: list[dict], *, step_key: str) -> Completion:
        if not messages:
            raise ValidationError("complete() needs at least one message")
        full = [{"role": "system", "content": system_prompt(profile.system_prompt_id)}]
        full.extend(messages)
        for attempt in range(1, self.max_attempts + 1):
            try:
                raw = self.backend.send(profile, full, step_key)
            except TransientBackendError as exc:
                if attempt == self.max_attempts:
                    raise BackendUnavailableError(
                        f"{step_key}: giving up after {attempt} attempts ({exc})"
                    ) from exc
                delay = self.backoff_base * 2 ** (attempt - 1)
                log.warning("%s: transient backend failure (%s), retry in %.1fs", step_key, exc, delay)
                self._sleep(delay)
                continue
            self.telemetry.record(step_key, profile.role, raw.prompt_tokens, raw.completion_tokens)
            return Completion(
                text=raw.text,
                prompt_tokens=raw.prompt_tokens,
                completion_tokens=raw.completion_tokens,
                backend=self.backend.name,
                attempt=attempt,
            )
        raise AssertionError("unreachable")

    def complete_structured(
        self,
        profile: AgentProfile,
        messages: list[dict],
        schema: dict,
        *,
        step_key: str,
        check: Callable[[Any], None] | None = None,
        parse: Callable[[str], Any] | None = None,
    ) -> StructuredCompletion:
        """Ask for JSON matching ``schema``; re-prompt with the error on failure.

        ``check`` may raise ``ValueError`` to reject values the schema cannot
        express (duplicates, cross references). ``parse`` replaces the default
        JSON extraction. After three unusable replies a
        :class:`MalformedOutputError` carries the last raw text.
        """
        jsonschema.Draft7Validator.check_schema(schema)
        validator = jsonschema.Draft7Validator(schema)
        convo = list(messages)
        last_text = ""
        for attempt in range(1, MAX_PARSE_ATTEMPTS + 1):
            completion = self.complete(profile, convo, step_key=step_key)
            last_text = completion.text
            try:
                value = (parse or extract_json)(completion.text)
                error = jsonschema.exceptions.best_match(validator.iter_errors(value))
                if error is not None:
                    where = "/".join(str(p) for p in error.absolute_path) or "<root>"
                    raise ValueError(f"schema violation at {where}: {error.message}")
                if check is not None:
                    check(value)
            except ValueError as exc:
                log.info("%s: unusable reply on attempt %d: %s", step_key, attempt, exc)
                convo = convo + [
                    {"role": "assistant", "content": completion.text},
                    {
                        "role": "user",
                        "content": (
                            f"Your previous reply could not be used: {exc}\n"
                            "Reply again with a single corrected JSON object."
                        ),
                    },
                ]
                continue
            return StructuredCompletion(value=value, attempts=attempt, raw_text=completion.text)
        raise MalformedOutputError(
            f"{step_key}: no valid output after {MAX_PARSE_ATTEMPTS} attempts", last_text, MAX_PARSE_ATTEMPTS
        )

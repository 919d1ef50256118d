"""Chat-completion backends: an OpenAI-compatible HTTP client and a scripted mock."""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Protocol

import httpx

from researchflow.config import ROLES, AgentProfile
from researchflow.errors import (
    CredentialError,
    ScriptUnderflowError,
    TransientBackendError,
    ValidationError,
)


@dataclass
class RawCompletion:
    text: str
    prompt_tokens: int
    completion_tokens: int


class Backend(Protocol):
    name: str

    def send(self, profile: AgentProfile, messages: list[dict], step_key: str) -> RawCompletion: ...


def approx_tokens(text: str) -> int:
    return len(text.split())


class OpenAIBackend:
    """Client for any server speaking the OpenAI chat-completions contract."""

    name = "openai"

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 120.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.model = model
        self.name = f"openai:{model}"
        key = api_key if api_key is not None else os.environ.get(api_key_env, "")
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(
            base_url=base_url.rstrip("/"), headers=headers, timeout=timeout, transport=transport
        )

    def send(self, profile: AgentProfile, messages: list[dict], step_key: str) -> RawCompletion:
        body = {"model": self.model, "messages": messages, "temperature": profile.temperature}
        try:
            resp = self._client.post("/chat/completions", json=body)
        except httpx.TimeoutException as exc:
            raise TransientBackendError(f"timeout: {exc}") from exc
        except httpx.TransportError as exc:
            raise TransientBackendError(f"transport error: {exc}") from exc

        status = resp.status_code
        if status in (401, 403):
            raise CredentialError(f"backend rejected credentials (HTTP {status})")
        if status == 429 or status >= 500 or status == 408:
            raise TransientBackendError(f"HTTP {status}", status=status)
        if status >= 400:
            raise ValidationError(f"backend refused request (HTTP {status}): {resp.text[:500]}")

        data = resp.json()
        text = data["choices"][0]["message"]["content"] or ""
        usage = data.get("usage") or {}
        return RawCompletion(
            text=text,
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
        )

    def close(self):
        self._client.close()


def _parse_script_key(key) -> tuple[str | None, str]:
    if isinstance(key, tuple):
        role, step = key
    elif ":" in key:
        role, step = key.split(":", 1)
    else:
        role, step = None, key
    if role is not None and role not in ROLES:
        raise ValidationError(f"script key {key!r} names unknown role {role!r}")
    if not step:
        raise ValidationError(f"script key {key!r} has an empty step key")
    return role, step


def _render(response: Any) -> str:
    return response if isinstance(response, str) else json.dumps(response)


class ScriptedBackend:
    """Deterministic backend that replays canned responses.

    The script maps ``(role, step_key)`` to a list of responses; each call pops
    the next one. File scripts spell keys as ``"role:step.key"``; a key without
    a role prefix serves every role. Non-string responses are sent as JSON.
    A value of the form ``{"always": response}`` never runs out.

    Lookup walks from the full step key towards its dotted prefixes
    (``design.details.s1.round2`` -> ``design.details.s1`` -> ``design.details``
    -> ``design``) and at each level prefers the role-specific entry. Exhausted
    entries are skipped, so a specific entry can override a general fallback
    for its first few calls.
    """

    name = "scripted"

    def __init__(self, script: Mapping):
        self._queues: dict[tuple[str | None, str], list[str]] = {}
        self._always: dict[tuple[str | None, str], str] = {}
        for raw_key, value in script.items():
            key = _parse_script_key(raw_key)
            if key in self._queues or key in self._always:
                raise ValidationError(f"duplicate script key {raw_key!r}")
            if isinstance(value, dict) and set(value) == {"always"}:
                self._always[key] = _render(value["always"])
            elif isinstance(value, list):
                self._queues[key] = [_render(v) for v in value]
            else:
                raise ValidationError(f"script entry {raw_key!r} must be a list or {{'always': ...}}")
        self._lock = threading.Lock()
        self.transcript: list[dict] = []

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ValidationError("mock script file must hold a JSON object")
        return cls(data)

    def _lookup(self, role: str, step_key: str) -> tuple[tuple, str] | None:
        parts = step_key.split(".")
        for n in range(len(parts), 0, -1):
            prefix = ".".join(parts[:n])
            for key in ((role, prefix), (None, prefix)):
                queue = self._queues.get(key)
                if queue:
                    return key, queue.pop(0)
                if key in self._always:
                    return key, self._always[key]
        return None

    def send(self, profile: AgentProfile, messages: list[dict], step_key: str) -> RawCompletion:
        with self._lock:
            found = self._lookup(profile.role, step_key)
            if found is None:
                raise ScriptUnderflowError(profile.role, step_key)
            matched, text = found
            self.transcript.append(
                {
                    "index": len(self.transcript),
                    "role": profile.role,
                    "step_key": step_key,
                    "matched": f"{matched[0] or '*'}:{matched[1]}",
                    "messages": [dict(m) for m in messages],
                    "response": text,
                }
            )
        prompt = "\n".join(m["content"] for m in messages)
        return RawCompletion(text, approx_tokens(prompt), approx_tokens(text))

    def calls_for(self, step_prefix: str, role: str | None = None) -> list[dict]:
        """Transcript entries whose step key starts with ``step_prefix``."""
        out = []
        for entry in self.transcript:
            key = entry["step_key"]
            if key == step_prefix or key.startswith(step_prefix + "."):
                if role is None or entry["role"] == role:
                    out.append(entry)
        return out

"""Run configuration: agent profiles, search caps, review and sandbox limits.

Defaults follow the reference setup: the query generator samples at 0.7, the
reviewer and the judge at 0.1, every other agent at 0.5; five queries per
request, ten hits per query per database, six reviewer rounds.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from researchflow.errors import ConfigError, ValidationError

ROLES = (
    "query-generator",
    "filter",
    "report-generator",
    "analyst",
    "designer",
    "extractor",
    "code-generator",
    "reviewer",
    "judge",
)

DEFAULT_TEMPERATURES = {role: 0.5 for role in ROLES}
DEFAULT_TEMPERATURES["query-generator"] = 0.7
DEFAULT_TEMPERATURES["reviewer"] = 0.1
DEFAULT_TEMPERATURES["judge"] = 0.1


@dataclass(frozen=True)
class AgentProfile:
    role: str
    system_prompt_id: str = ""
    temperature: float = 0.5

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValidationError(f"unknown agent role {self.role!r}")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValidationError(f"temperature {self.temperature} outside [0, 2]")
        if not self.system_prompt_id:
            object.__setattr__(self, "system_prompt_id", self.role)


def default_profile(role: str) -> AgentProfile:
    return AgentProfile(role=role, system_prompt_id=role, temperature=DEFAULT_TEMPERATURES[role])


@dataclass
class SandboxConfig:
    backend: str = "local"  # "local" (mount namespace) or "docker"
    timeout_s: float = 1800.0
    memory_mb: int = 4096
    network: bool = True
    image: str = "rocker/r-ver:4.4.1"
    docker_socket: str = "/var/run/docker.sock"


@dataclass
class LLMConfig:
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4o"
    api_key_env: str = "OPENAI_API_KEY"
    request_timeout_s: float = 120.0
    max_attempts: int = 5
    backoff_base_s: float = 1.0


@dataclass
class EUtilsConfig:
    base_url: str = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils"
    api_key_env: str = "NCBI_API_KEY"
    tool: str = "researchflow"
    email: str = ""
    request_timeout_s: float = 30.0


@dataclass
class PipelineConfig:
    agents: dict[str, AgentProfile] = field(
        default_factory=lambda: {role: default_profile(role) for role in ROLES}
    )
    queries_per_request: int = 5
    max_results_per_query_per_db: int = 10
    max_review_rounds: int = 6
    paper_keep_threshold: int = 4
    max_code_repair_iterations: int = 10
    max_workers: int = 4
    evaluate: bool = False
    sandbox: SandboxConfig = field(default_factory=SandboxConfig)
    llm: LLMConfig = field(default_factory=LLMConfig)
    eutils: EUtilsConfig = field(default_factory=EUtilsConfig)

    def profile(self, role: str) -> AgentProfile:
        return self.agents[role]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


_COUNT_FIELDS = (
    "queries_per_request",
    "max_results_per_query_per_db",
    "max_review_rounds",
    "max_code_repair_iterations",
    "max_workers",
)


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_count(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _sub(raw: dict, key: str, cls, violations: list, path: str):
    """Build a nested dataclass section, recording type problems under ``path``."""
    section = raw.get(key, {})
    if section is None:
        section = {}
    if not isinstance(section, dict):
        violations.append((path, "must be a mapping"))
        return cls()
    known = cls.__dataclass_fields__
    for k in section:
        if k not in known:
            violations.append((f"{path}.{k}", "unknown field"))
    defaults = cls()
    kwargs = {}
    for name in known:
        if name not in section:
            continue
        value = section[name]
        expected = type(getattr(defaults, name))
        if expected is float and _is_number(value):
            value = float(value)
        elif expected is int and not _is_count(value):
            violations.append((f"{path}.{name}", "must be an integer"))
            continue
        elif expected is bool and not isinstance(value, bool):
            violations.append((f"{path}.{name}", "must be a boolean"))
            continue
        elif expected is str and not isinstance(value, str):
            violations.append((f"{path}.{name}", "must be a string"))
            continue
        elif expected is float and not isinstance(value, float):
            violations.append((f"{path}.{name}", "must be a number"))
            continue
        kwargs[name] = value
    return cls(**kwargs)


def validate_config(raw: dict | None) -> PipelineConfig:
    """Turn a raw config document into a :class:`PipelineConfig`.

    Unset fields take their defaults. Every violation is collected and reported
    together in a single :class:`ConfigError`.
    """
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError([("<root>", "config document must be a mapping")])
    violations: list[tuple[str, str]] = []

    top_level = set(PipelineConfig.__dataclass_fields__)
    for key in raw:
        if key not in top_level:
            violations.append((key, "unknown field"))

    kwargs: dict[str, Any] = {}
    for name in _COUNT_FIELDS:
        if name in raw:
            value = raw[name]
            if not _is_count(value):
                violations.append((name, "must be an integer"))
            elif value < 1:
                violations.append((name, f"must be >= 1, got {value}"))
            else:
                kwargs[name] = value

    if "paper_keep_threshold" in raw:
        t = raw["paper_keep_threshold"]
        if not _is_count(t) or not 1 <= t <= 5:
            violations.append(("paper_keep_threshold", f"must be an integer in 1..5, got {t!r}"))
        else:
            kwargs["paper_keep_threshold"] = t

    if "evaluate" in raw:
        if isinstance(raw["evaluate"], bool):
            kwargs["evaluate"] = raw["evaluate"]
        else:
            violations.append(("evaluate", "must be a boolean"))

    agents = {role: default_profile(role) for role in ROLES}
    raw_agents = raw.get("agents") or {}
    if not isinstance(raw_agents, dict):
        violations.append(("agents", "must be a mapping of role -> profile"))
        raw_agents = {}
    for role, spec in raw_agents.items():
        path = f"agents.{role}"
        if role not in ROLES:
            violations.append((path, "unknown agent role"))
            continue
        if not isinstance(spec, dict):
            violations.append((path, "must be a mapping"))
            continue
        temp = spec.get("temperature", DEFAULT_TEMPERATURES[role])
        prompt_id = spec.get("system_prompt_id", role)
        for k in spec:
            if k == "role" and spec[k] != role:
                violations.append((f"{path}.role", f"does not match the key {role!r}"))
            elif k not in ("temperature", "system_prompt_id", "role"):
                violations.append((f"{path}.{k}", "unknown field"))
        if not _is_number(temp) or not 0.0 <= temp <= 2.0:
            violations.append((f"{path}.temperature", f"must be a number in [0, 2], got {temp!r}"))
            continue
        if not isinstance(prompt_id, str) or not prompt_id:
            violations.append((f"{path}.system_prompt_id", "must be a non-empty string"))
            continue
        agents[role] = AgentProfile(role=role, system_prompt_id=prompt_id, temperature=float(temp))
    kwargs["agents"] = agents

    sandbox = _sub(raw, "sandbox", SandboxConfig, violations, "sandbox")
    if sandbox.timeout_s <= 0:
        violations.append(("sandbox.timeout_s", "must be > 0"))
    if sandbox.memory_mb < 1:
        violations.append(("sandbox.memory_mb", "must be >= 1"))
    if sandbox.backend not in ("local", "docker"):
        violations.append(("sandbox.backend", "must be 'local' or 'docker'"))
    kwargs["sandbox"] = sandbox

    llm = _sub(raw, "llm", LLMConfig, violations, "llm")
    if llm.max_attempts < 1:
        violations.append(("llm.max_attempts", "must be >= 1"))
    if llm.request_timeout_s <= 0:
        violations.append(("llm.request_timeout_s", "must be > 0"))
    kwargs["llm"] = llm

    eutils = _sub(raw, "eutils", EUtilsConfig, violations, "eutils")
    if eutils.request_timeout_s <= 0:
        violations.append(("eutils.request_timeout_s", "must be > 0"))
    kwargs["eutils"] = eutils

    if violations:
        raise ConfigError(violations)
    return PipelineConfig(**kwargs)


def load_config(path: str | Path | None) -> PipelineConfig:
    """Read a YAML or JSON config file (JSON parses as YAML)."""
    if path is None:
        return validate_config({})
    text = Path(path).read_text(encoding="utf-8")
    return validate_config(yaml.safe_load(text) or {})


def config_fingerprint(config: PipelineConfig) -> str:
    return json.dumps(config.to_dict(), sort_keys=True)

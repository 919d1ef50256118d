"""Produce -> review -> revise loop shared by the literature and design stages."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Callable

from researchflow.config import AgentProfile
from researchflow.errors import MalformedOutputError, ValidationError
from researchflow.llm.gateway import Gateway, extract_json

log = logging.getLogger(__name__)

APPROVE = "approve"
REVISE = "revise"
FAILSAFE_FEEDBACK = (
    "The review could not be completed. Re-check the output against the task "
    "instructions and return an improved version."
)

VERDICT_SCHEMA = {
    "type": "object",
    "required": ["decision"],
    "properties": {
        "decision": {"enum": [APPROVE, REVISE]},
        "feedback": {"type": "string"},
    },
}


@dataclass(frozen=True)
class ReviewVerdict:
    decision: str
    feedback: str = ""

    def __post_init__(self):
        if self.decision not in (APPROVE, REVISE):
            raise ValidationError(f"unknown review decision {self.decision!r}")
        if self.decision == REVISE and not self.feedback.strip():
            raise ValidationError("a revise verdict needs feedback")
        if self.decision == APPROVE and self.feedback:
            raise ValidationError("an approve verdict carries no feedback")

    @property
    def approved(self) -> bool:
        return self.decision == APPROVE


def parse_verdict(text: str) -> dict:
    """Accept ``APPROVE``, ``REVISE: <feedback>`` or a JSON verdict."""
    stripped = text.strip()
    head = stripped.upper().rstrip(".!")
    if head == "APPROVE" or head == "APPROVED":
        return {"decision": APPROVE}
    if stripped.upper().startswith("REVISE"):
        feedback = stripped[len("REVISE"):].lstrip(" :-\n")
        return {"decision": REVISE, "feedback": feedback}
    value = extract_json(stripped)
    if isinstance(value, dict) and isinstance(value.get("decision"), str):
        value = dict(value, decision=value["decision"].lower())
    return value


def _check_verdict(value: dict):
    if value["decision"] == REVISE and not str(value.get("feedback", "")).strip():
        raise ValueError("a 'revise' decision must include non-empty feedback")


class Reviewer:
    def __init__(self, gateway: Gateway, profile: AgentProfile):
        self.gateway = gateway
        self.profile = profile

    def review(self, artifact: str, context: str, *, step_key: str) -> ReviewVerdict:
        if not artifact.strip():
            raise ValidationError("cannot review an empty artifact")
        messages = [
            {
                "role": "user",
                "content": f"{context}\n\nOutput to review:\n{artifact}",
            }
        ]
        try:
            result = self.gateway.complete_structured(
                self.profile,
                messages,
                VERDICT_SCHEMA,
                step_key=step_key,
                parse=parse_verdict,
                check=_check_verdict,
            )
        except MalformedOutputError:
            log.warning("%s: reviewer output unusable, treating as revise", step_key)
            return ReviewVerdict(REVISE, FAILSAFE_FEEDBACK)
        value = result.value
        if value["decision"] == APPROVE:
            return ReviewVerdict(APPROVE)
        return ReviewVerdict(REVISE, value["feedback"].strip())


@dataclass
class ReviewOutcome:
    artifact: Any
    rounds: int
    approved: bool
    transcript: list[dict] = field(default_factory=list)


def review_loop(
    produce: Callable[[str | None, int], Any],
    review: Callable[[Any, int], ReviewVerdict],
    max_rounds: int = 6,
    *,
    label: str = "",
) -> ReviewOutcome:
    """Alternate production and review until approval or ``max_rounds`` reviews.

    ``produce(feedback, round)`` returns revision ``round``; ``feedback`` is the
    previous verdict's text (``None`` in round 1). Rounds count reviewer calls.
    Hitting the cap keeps the last revision and flags it unapproved.
    """
    if max_rounds < 1:
        raise ValidationError("max_rounds must be >= 1")
    transcript = []
    feedback = None
    artifact = None
    for rnd in range(1, max_rounds + 1):
        artifact = produce(feedback, rnd)
        verdict = review(artifact, rnd)
        transcript.append(
            {"round": rnd, "artifact": artifact, "decision": verdict.decision, "feedback": verdict.feedback}
        )
        if verdict.approved:
            return ReviewOutcome(artifact, rnd, True, transcript)
        feedback = verdict.feedback
    log.warning("%s: reviewer did not approve within %d rounds; keeping last revision", label or "review", max_rounds)
    return ReviewOutcome(artifact, max_rounds, False, transcript)


def reviewed_completion(
    gateway: Gateway,
    producer: AgentProfile,
    reviewer: Reviewer,
    messages: list[dict],
    schema: dict,
    *,
    step_key: str,
    review_context: str,
    max_rounds: int,
    check: Callable[[Any], None] | None = None,
    render: Callable[[Any], str] | None = None,
) -> ReviewOutcome:
    """Structured generation wrapped in the review loop.

    Each revision continues the producer conversation: the previous output and
    the reviewer's feedback, verbatim, are appended before asking again.
    """
    render = render or (lambda v: json.dumps(v, indent=2, ensure_ascii=False))
    convo = list(messages)

    def produce(feedback, rnd):
        nonlocal convo
        if feedback is not None:
            convo = convo + [
                {"role": "user", "content": f"Reviewer feedback:\n{feedback}\n\nRevise your output accordingly."}
            ]
        result = gateway.complete_structured(
            producer, convo, schema, step_key=f"{step_key}.round{rnd}", check=check
        )
        convo = convo + [{"role": "assistant", "content": result.raw_text}]
        return result.value

    def review(value, rnd):
        return reviewer.review(render(value), review_context, step_key=f"{step_key}.round{rnd}")

    return review_loop(produce, review, max_rounds, label=step_key)

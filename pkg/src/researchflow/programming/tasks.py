"""Dry-lab task records and their extraction from a protocol."""

from __future__ import annotations

from dataclasses import dataclass, field

import jsonschema

from researchflow.design import Protocol
from researchflow.errors import MalformedOutputError, TaskExtractionError, ValidationError
from researchflow.llm.gateway import Gateway
from researchflow.llm.prompts import dump

_IO = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["type", "description"],
        "properties": {"type": {"type": "string", "minLength": 1}, "description": {"type": "string", "minLength": 1}},
    },
}

TASKS_JSON_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["tasks"],
    "properties": {
        "tasks": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "description", "inputs", "outputs"],
                "properties": {
                    "id": {"type": "integer", "minimum": 1},
                    "description": {"type": "string", "minLength": 1},
                    "inputs": _IO,
                    "outputs": dict(_IO, minItems=1),
                },
            },
        }
    },
}


@dataclass(frozen=True)
class DryLabTask:
    id: int
    description: str
    inputs: tuple[tuple[str, str], ...] = ()
    outputs: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.id < 1:
            raise ValidationError(f"task id {self.id} must be >= 1")
        if not self.description.strip():
            raise ValidationError(f"task {self.id}: empty description")
        if not self.outputs:
            raise ValidationError(f"task {self.id}: no outputs declared")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "description": self.description,
            "inputs": [{"type": t, "description": d} for t, d in self.inputs],
            "outputs": [{"type": t, "description": d} for t, d in self.outputs],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DryLabTask":
        return cls(
            int(data["id"]),
            data["description"].strip(),
            tuple((io["type"], io["description"]) for io in data["inputs"]),
            tuple((io["type"], io["description"]) for io in data["outputs"]),
        )


def check_task_ids(tasks: list[dict]):
    ids = [t["id"] for t in tasks]
    if ids != list(range(1, len(ids) + 1)):
        raise ValueError(f"task ids must be 1..{len(ids)} in order, got {ids}")


def tasks_to_json(tasks: list[DryLabTask]) -> dict:
    return {"tasks": [t.to_dict() for t in tasks]}


def tasks_from_json(data: dict) -> list[DryLabTask]:
    jsonschema.validate(data, TASKS_JSON_SCHEMA)
    check_task_ids(data["tasks"])
    return [DryLabTask.from_dict(t) for t in data["tasks"]]


def extract_tasks(gateway: Gateway, profile, protocol: Protocol) -> list[DryLabTask]:
    prompt = (
        f"Experimental protocol (JSON):\n{dump(protocol.to_dict())}\n\n"
        "List the computational (dry-lab) tasks needed to carry out this protocol, in the "
        "order they must run. Number them 1, 2, 3, ... Give each task a description and the "
        "types and descriptions of its inputs and outputs; every task produces at least one "
        "output.\n\n"
        'Reply as {"tasks": [{"id": 1, "description": "...", "inputs": [{"type": "...", '
        '"description": "..."}], "outputs": [{"type": "...", "description": "..."}]}]}.'
    )

    def check(value):
        check_task_ids(value["tasks"])
        for t in value["tasks"]:
            if not t["description"].strip():
                raise ValueError(f"task {t['id']} has an empty description")

    try:
        result = gateway.complete_structured(
            profile, [{"role": "user", "content": prompt}], TASKS_JSON_SCHEMA,
            step_key="programming.tasks", check=check,
        )
    except MalformedOutputError as exc:
        raise TaskExtractionError(str(exc)) from exc
    return [DryLabTask.from_dict(t) for t in result.value["tasks"]]

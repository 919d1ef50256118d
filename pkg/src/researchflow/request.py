from __future__ import annotations

from dataclasses import asdict, dataclass

from researchflow.errors import ValidationError


@dataclass(frozen=True)
class ResearchRequest:
    """What the user wants studied, under which conditions, with which requirements."""

    objective: str
    conditions: str = ""
    requirements: str = ""

    def __post_init__(self):
        if not isinstance(self.objective, str) or not self.objective.strip():
            raise ValidationError("research objective must be non-empty")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ResearchRequest":
        return cls(
            objective=data.get("objective", ""),
            conditions=data.get("conditions", "") or "",
            requirements=data.get("requirements", "") or "",
        )

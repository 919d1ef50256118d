from __future__ import annotations

from dataclasses import dataclass, field

from researchflow.errors import ValidationError


@dataclass(frozen=True)
class Block:
    title: str
    text: str


@dataclass
class StructuredDocument:
    """A paper's full text as an ordered list of titled blocks."""

    paper_id: str
    blocks: list[Block] = field(default_factory=list)

    def __post_init__(self):
        if not self.blocks:
            raise ValidationError(f"{self.paper_id}: document has no blocks")
        for b in self.blocks:
            if not b.title.strip():
                raise ValidationError(f"{self.paper_id}: block with empty title")

    def render(self) -> str:
        return "\n\n".join(f"## {b.title}\n{b.text}" for b in self.blocks)

    def to_dict(self) -> dict:
        return {"paper_id": self.paper_id, "blocks": [{"title": b.title, "text": b.text} for b in self.blocks]}

    @classmethod
    def from_dict(cls, data: dict) -> "StructuredDocument":
        return cls(data["paper_id"], [Block(b["title"], b["text"]) for b in data["blocks"]])

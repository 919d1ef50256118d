"""Boolean query trees and their E-utilities text form.

Only AND and OR are supported. Operators chain left to right, as Entrez does,
so ``a AND b OR c`` means ``(a AND b) OR c``; the serializer always
parenthesizes nested groups, which makes ``parse(serialize(q)) == q`` hold.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

from researchflow.errors import QuerySyntaxError

OPERATORS = ("AND", "OR")
_FIELD = re.compile(r"^[^\[\]\"()]+$")
_BARE_FORBIDDEN = re.compile(r"[\s()\[\]\"]")


@dataclass(frozen=True)
class Term:
    text: str
    field: str | None = None
    quoted: bool = False

    def __post_init__(self):
        text = self.text if self.quoted else " ".join(self.text.split())
        object.__setattr__(self, "text", text)
        if not text.strip():
            raise QuerySyntaxError("empty search term")
        if '"' in text:
            raise QuerySyntaxError(f"term contains a double quote: {text!r}")
        if not self.quoted:
            for word in text.split(" "):
                if word in OPERATORS or word == "NOT" or re.search(r"[()\[\]]", word):
                    raise QuerySyntaxError(f"bare term {text!r} must be quoted")
        if self.field is not None and (not _FIELD.match(self.field) or not self.field.strip()):
            raise QuerySyntaxError(f"bad field tag {self.field!r}")

    def serialize(self) -> str:
        body = f'"{self.text}"' if self.quoted else self.text
        return f"{body}[{self.field}]" if self.field else body


@dataclass(frozen=True)
class Group:
    op: str
    children: tuple

    def __post_init__(self):
        if self.op not in OPERATORS:
            raise QuerySyntaxError(f"unsupported operator {self.op!r}")
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise QuerySyntaxError("an operator group needs at least two operands")

    def serialize(self) -> str:
        parts = [f"({c.serialize()})" if isinstance(c, Group) else c.serialize() for c in self.children]
        return f" {self.op} ".join(parts)


Node = Union[Term, Group]


@dataclass(frozen=True)
class BooleanQuery:
    root: Node
    database: str | None = None  # None: run against every configured database

    def serialize(self) -> str:
        return self.root.serialize()

    def terms(self) -> list[Term]:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, Term):
                out.append(node)
            else:
                stack.extend(reversed(node.children))
        return out

    @classmethod
    def parse(cls, text: str, database: str | None = None) -> "BooleanQuery":
        return cls(parse_expression(text), database)

    def __str__(self) -> str:
        return self.serialize()


_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<lp>\()
  | (?P<rp>\))
  | (?P<phrase>"[^"]*")(?P<pfield>\[[^\]]*\])?
  | (?P<word>[^\s()"\[\]]+)(?P<wfield>\[[^\]]*\])?
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise QuerySyntaxError(f"unexpected character {text[pos]!r} at {pos}")
        pos = m.end()
        if m.group("ws"):
            continue
        if m.group("lp"):
            tokens.append(("(",))
        elif m.group("rp"):
            tokens.append((")",))
        elif m.group("phrase"):
            field = m.group("pfield")
            tokens.append(("phrase", m.group("phrase")[1:-1], field[1:-1] if field else None))
        else:
            word, field = m.group("word"), m.group("wfield")
            if word in OPERATORS and not field:
                tokens.append(("op", word))
            elif word == "NOT" and not field:
                raise QuerySyntaxError("NOT is not supported")
            else:
                tokens.append(("word", word, field[1:-1] if field else None))
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expression(self) -> Node:
        current = [self.operand()]
        current_op = None
        while (tok := self.peek()) is not None and tok[0] == "op":
            op = self.take()[1]
            operand = self.operand()
            if current_op is None or op == current_op:
                current.append(operand)
            else:
                current = [Group(current_op, current), operand]
            current_op = op
        return current[0] if current_op is None else Group(current_op, current)

    def operand(self) -> Node:
        tok = self.take()
        if tok is None:
            raise QuerySyntaxError("query ends where a term was expected")
        kind = tok[0]
        if kind == "(":
            node = self.expression()
            close = self.take()
            if close is None:
                raise QuerySyntaxError("unbalanced parentheses")
            if close[0] != ")":
                raise QuerySyntaxError("terms must be joined by AND or OR")
            return node
        if kind == "phrase":
            return Term(tok[1], tok[2], quoted=True)
        if kind == "word":
            words, field = [tok[1]], tok[2]
            while field is None and (nxt := self.peek()) is not None and nxt[0] == "word":
                self.take()
                words.append(nxt[1])
                field = nxt[2]
            return Term(" ".join(words), field, quoted=False)
        raise QuerySyntaxError(f"unexpected {tok[-1] if kind == 'op' else kind!r} where a term was expected")


def parse_expression(text: str) -> Node:
    if not isinstance(text, str) or not text.strip():
        raise QuerySyntaxError("empty query")
    parser = _Parser(_tokenize(text))
    node = parser.expression()
    rest = parser.peek()
    if rest is not None:
        if rest[0] == ")":
            raise QuerySyntaxError("unbalanced parentheses")
        raise QuerySyntaxError("terms must be joined by AND or OR")
    return node

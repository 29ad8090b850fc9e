"""Boolean/field query language for the sparse store.

Grammar: bare terms, "quoted phrases", field:value filters, operators
NOT > AND > OR in precedence, parentheses for grouping, and bare
adjacency meaning AND. Operators are recognized in uppercase only, so
lowercase ``and`` / ``or`` / ``not`` remain searchable terms.
"""

from __future__ import annotations

import re
from dataclasses import dataclass


class QuerySyntaxError(Exception):
    """Malformed query; ``position`` is the 0-based character offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class PureNegationError(Exception):
    """NOT without a positive sibling under an AND is not evaluable."""


# --- AST nodes ---------------------------------------------------------------

@dataclass(frozen=True)
class Term:
    text: str


@dataclass(frozen=True)
class Phrase:
    words: tuple[str, ...]


@dataclass(frozen=True)
class FieldFilter:
    field: str
    value: str


@dataclass(frozen=True)
class And:
    children: tuple["Node", ...]


@dataclass(frozen=True)
class Or:
    children: tuple["Node", ...]


@dataclass(frozen=True)
class Not:
    child: "Node"


Node = Term | Phrase | FieldFilter | And | Or | Not


# --- Tokenizer ---------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<quoted>"[^"]*")
  | (?P<word>[^\s()":]+)
  | (?P<colon>:)
    """,
    re.VERBOSE,
)


def _tokenize(q: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(q):
        m = _TOKEN.match(q, pos)
        if m is None:
            if q[pos] == '"':
                raise QuerySyntaxError("unterminated quote", pos)
            raise QuerySyntaxError(f"unexpected character {q[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    return tokens


# --- Recursive-descent parser ------------------------------------------------

class _Parser:
    def __init__(self, query: str):
        self.query = query
        self.tokens = _tokenize(query)
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def advance(self):
        tok = self.peek()
        self.i += 1
        return tok

    def parse(self) -> Node:
        if not self.tokens:
            raise QuerySyntaxError("empty query", 0)
        node = self.or_expr()
        tok = self.peek()
        if tok is not None:
            raise QuerySyntaxError(f"unexpected token {tok[1]!r}", tok[2])
        return node

    def or_expr(self) -> Node:
        children = [self.and_expr()]
        while self._at_operator("OR"):
            self.advance()
            children.append(self.and_expr())
        return children[0] if len(children) == 1 else Or(tuple(children))

    def and_expr(self) -> Node:
        children = [self.unary()]
        while True:
            if self._at_operator("AND"):
                self.advance()
                children.append(self.unary())
                continue
            tok = self.peek()
            # bare adjacency = AND
            if tok is not None and tok[0] != "rparen" and not self._at_operator("OR"):
                children.append(self.unary())
                continue
            break
        return children[0] if len(children) == 1 else And(tuple(children))

    def unary(self) -> Node:
        if self._at_operator("NOT"):
            tok = self.advance()
            if self.peek() is None:
                raise QuerySyntaxError("NOT requires an operand", tok[2])
            return Not(self.unary())
        return self.atom()

    def atom(self) -> Node:
        tok = self.peek()
        if tok is None:
            raise QuerySyntaxError("unexpected end of query", len(self.query))
        kind, value, pos = tok
        if kind == "lparen":
            self.advance()
            node = self.or_expr()
            closing = self.peek()
            if closing is None or closing[0] != "rparen":
                raise QuerySyntaxError("missing closing parenthesis", pos)
            self.advance()
            return node
        if kind == "quoted":
            self.advance()
            words = value[1:-1].split()
            if not words:
                raise QuerySyntaxError("empty phrase", pos)
            return Phrase(tuple(words))
        if kind == "word":
            self.advance()
            nxt = self.peek()
            if nxt is not None and nxt[0] == "colon":
                self.advance()
                val = self.peek()
                if val is None or val[0] not in ("word", "quoted"):
                    raise QuerySyntaxError(f"field {value!r} missing value", pos)
                self.advance()
                raw = val[1][1:-1] if val[0] == "quoted" else val[1]
                return FieldFilter(value, raw)
            if value in ("AND", "OR"):
                raise QuerySyntaxError(f"operator {value} missing operand", pos)
            return Term(value)
        raise QuerySyntaxError(f"unexpected token {value!r}", pos)

    def _at_operator(self, name: str) -> bool:
        tok = self.peek()
        return tok is not None and tok[0] == "word" and tok[1] == name


def _check_negation(node: Node, under_and_with_positive: bool = False) -> None:
    """Reject pure negation: Not is legal only beside a positive sibling
    under an And."""
    if isinstance(node, Not):
        if not under_and_with_positive:
            raise PureNegationError(
                "NOT must appear alongside a positive clause under AND")
        _check_negation(node.child, False)
    elif isinstance(node, And):
        has_positive = any(not isinstance(c, Not) for c in node.children)
        for child in node.children:
            _check_negation(child, has_positive)
    elif isinstance(node, Or):
        for child in node.children:
            _check_negation(child, False)


def parse_query(q: str) -> Node:
    """Parse a query string into an AST.

    Raises QuerySyntaxError with a character position for malformed input
    and PureNegationError when the query is negation-only.
    """
    if not q or not q.strip():
        raise QuerySyntaxError("empty query", 0)
    node = _Parser(q).parse()
    _check_negation(node)
    return node


def render(node: Node) -> str:
    """Render an AST back to query syntax; parse(render(ast)) == ast."""
    if isinstance(node, Term):
        return node.text
    if isinstance(node, Phrase):
        return '"' + " ".join(node.words) + '"'
    if isinstance(node, FieldFilter):
        if re.search(r'[\s()":]', node.value):
            return f'{node.field}:"{node.value}"'
        return f"{node.field}:{node.value}"
    if isinstance(node, Not):
        return f"NOT {render(node.child)}"
    if isinstance(node, And):
        return "(" + " AND ".join(render(c) for c in node.children) + ")"
    if isinstance(node, Or):
        return "(" + " OR ".join(render(c) for c in node.children) + ")"
    raise TypeError(f"not a query node: {node!r}")


def iter_positive_leaves(node: Node):
    """Yield Term and Phrase leaves not under a NOT (the scored leaves)."""
    if isinstance(node, (Term, Phrase)):
        yield node
    elif isinstance(node, (And, Or)):
        for child in node.children:
            yield from iter_positive_leaves(child)
    # Not subtrees and FieldFilters contribute no score

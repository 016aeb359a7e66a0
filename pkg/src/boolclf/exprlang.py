"""Boolean expressions over named primitive concepts.

Expressions are immutable binary trees built from ``Primitive``, ``Not``,
``And`` and ``Or`` nodes.  The concrete syntax accepted by :func:`parse` uses
``!`` / ``NOT`` (tightest), ``&`` / ``AND``, then ``|`` / ``OR`` (loosest),
all binary operators left-associative, parentheses allowed, whitespace and
keyword case ignored.  ``A & B | !C`` therefore parses as ``((A & B) | (!C))``
and written chains such as ``A & B & C`` desugar to left-nested binaries.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import (
    ExprSyntaxError,
    InsufficientPrimitivesError,
    MissingPrimitiveError,
    SizeExceededError,
)

__all__ = [
    "Primitive",
    "Not",
    "And",
    "Or",
    "Expression",
    "parse",
    "unparse",
    "post_order",
    "primitive_names",
    "eval_truth",
    "eval_bool_columns",
    "truth_table",
    "to_nnf",
    "to_cnf",
    "is_cnf",
    "cnf_clauses",
    "random_expression",
    "random_cnf",
    "random_cnf_from_clauses",
    "random_binary_expressions",
    "load_expressions",
    "save_expressions",
]


@dataclass(frozen=True)
class Primitive:
    name: str


@dataclass(frozen=True)
class Not:
    child: "Expression"


@dataclass(frozen=True)
class And:
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Or:
    left: "Expression"
    right: "Expression"


Expression = Union[Primitive, Not, And, Or]

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
# word forms are operators in any case, so they are not usable as names
_KEYWORD_OPS = {"NOT": "!", "AND": "&", "OR": "|"}


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


def _tokenize(text: str) -> list[tuple[str, int]]:
    """Return (kind, byte offset) pairs; kind is '!', '&', '|', '(', ')' or 'ident:<name>'."""
    tokens: list[tuple[str, int]] = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        off = _byte_offset(text, i)
        if ch in "!&|()":
            tokens.append((ch, off))
            i += 1
            continue
        m = _IDENT_RE.match(text, i)
        if m:
            word = m.group(0)
            op = _KEYWORD_OPS.get(word.upper())
            tokens.append((op if op else "ident:" + word, off))
            i = m.end()
            continue
        raise ExprSyntaxError(f"illegal token {ch!r}", off)
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self) -> str | None:
        return self.tokens[self.pos][0] if self.pos < len(self.tokens) else None

    def offset(self) -> int:
        if self.pos < len(self.tokens):
            return self.tokens[self.pos][1]
        return len(self.text.encode("utf-8"))

    def advance(self) -> str:
        kind = self.tokens[self.pos][0]
        self.pos += 1
        return kind

    def parse(self) -> Expression:
        expr = self.or_expr()
        if self.peek() is not None:
            raise ExprSyntaxError(f"unexpected token {self.peek()!r}", self.offset())
        return expr

    def or_expr(self) -> Expression:
        expr = self.and_expr()
        while self.peek() == "|":
            self.advance()
            expr = Or(expr, self.and_expr())
        return expr

    def and_expr(self) -> Expression:
        expr = self.unary()
        while self.peek() == "&":
            self.advance()
            expr = And(expr, self.unary())
        return expr

    def unary(self) -> Expression:
        if self.peek() == "!":
            self.advance()
            return Not(self.unary())
        return self.atom()

    def atom(self) -> Expression:
        kind = self.peek()
        if kind is None:
            raise ExprSyntaxError("dangling operator or empty operand", self.offset())
        if kind == "(":
            open_off = self.offset()
            self.advance()
            expr = self.or_expr()
            if self.peek() != ")":
                raise ExprSyntaxError("unbalanced parenthesis", open_off)
            self.advance()
            return expr
        if kind.startswith("ident:"):
            self.advance()
            return Primitive(kind[6:])
        raise ExprSyntaxError(f"unexpected token {kind!r}", self.offset())


def parse(text: str) -> Expression:
    """Parse expression text into its AST.

    Raises :class:`ExprSyntaxError` (with a byte offset) on empty input,
    unbalanced parentheses, dangling operators or illegal tokens.
    """
    if not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(text).parse()


def unparse(expr: Expression) -> str:
    """Fully parenthesized canonical text; ``parse(unparse(e))`` equals ``e``."""
    if isinstance(expr, Primitive):
        return expr.name
    if isinstance(expr, Not):
        return f"(!{unparse(expr.child)})"
    if isinstance(expr, And):
        return f"({unparse(expr.left)} & {unparse(expr.right)})"
    if isinstance(expr, Or):
        return f"({unparse(expr.left)} | {unparse(expr.right)})"
    raise TypeError(f"not an expression node: {expr!r}")


def post_order(expr: Expression) -> list[Expression]:
    """All nodes with children before parents, leaves left-to-right."""
    out: list[Expression] = []
    stack: list[tuple[Expression, bool]] = [(expr, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            out.append(node)
            continue
        stack.append((node, True))
        if isinstance(node, Not):
            stack.append((node.child, False))
        elif isinstance(node, (And, Or)):
            stack.append((node.right, False))
            stack.append((node.left, False))
    return out


def primitive_names(expr: Expression) -> list[str]:
    """Sorted unique primitive names appearing in the expression."""
    names = {n.name for n in post_order(expr) if isinstance(n, Primitive)}
    return sorted(names)


def eval_truth(expr: Expression, assignment: Mapping[str, bool]) -> bool:
    """Standard boolean semantics under a total assignment."""
    if isinstance(expr, Primitive):
        try:
            return bool(assignment[expr.name])
        except KeyError:
            raise MissingPrimitiveError(f"assignment missing primitive {expr.name!r}") from None
    if isinstance(expr, Not):
        return not eval_truth(expr.child, assignment)
    if isinstance(expr, And):
        return eval_truth(expr.left, assignment) and eval_truth(expr.right, assignment)
    if isinstance(expr, Or):
        return eval_truth(expr.left, assignment) or eval_truth(expr.right, assignment)
    raise TypeError(f"not an expression node: {expr!r}")


def eval_bool_columns(expr: Expression, columns: Mapping[str, np.ndarray]) -> np.ndarray:
    """Vectorized :func:`eval_truth`: columns map names to equal-length bool arrays."""
    if isinstance(expr, Primitive):
        try:
            return np.asarray(columns[expr.name], dtype=bool)
        except KeyError:
            raise MissingPrimitiveError(f"columns missing primitive {expr.name!r}") from None
    if isinstance(expr, Not):
        return ~eval_bool_columns(expr.child, columns)
    if isinstance(expr, And):
        return eval_bool_columns(expr.left, columns) & eval_bool_columns(expr.right, columns)
    if isinstance(expr, Or):
        return eval_bool_columns(expr.left, columns) | eval_bool_columns(expr.right, columns)
    raise TypeError(f"not an expression node: {expr!r}")


def truth_table(expr: Expression, names: Sequence[str] | None = None) -> np.ndarray:
    """Truth value for all 2**k assignments over ``names`` (default: the expression's).

    Row ``i`` assigns ``bool(i >> j & 1)`` to ``names[j]``.
    """
    if names is None:
        names = primitive_names(expr)
    rows = np.arange(2 ** len(names))
    columns = {name: ((rows >> j) & 1).astype(bool) for j, name in enumerate(names)}
    return eval_bool_columns(expr, columns)


# ---------------------------------------------------------------------------
# normal forms


def to_nnf(expr: Expression) -> Expression:
    """Push negations onto primitives (De Morgan), eliminating double negation."""
    if isinstance(expr, Primitive):
        return expr
    if isinstance(expr, And):
        return And(to_nnf(expr.left), to_nnf(expr.right))
    if isinstance(expr, Or):
        return Or(to_nnf(expr.left), to_nnf(expr.right))
    if isinstance(expr, Not):
        inner = expr.child
        if isinstance(inner, Primitive):
            return expr
        if isinstance(inner, Not):
            return to_nnf(inner.child)
        if isinstance(inner, And):
            return Or(to_nnf(Not(inner.left)), to_nnf(Not(inner.right)))
        if isinstance(inner, Or):
            return And(to_nnf(Not(inner.left)), to_nnf(Not(inner.right)))
    raise TypeError(f"not an expression node: {expr!r}")


def _fold(op, parts: Sequence[Expression]) -> Expression:
    return reduce(op, parts)


def _cnf_clause_lists(expr: Expression, max_clauses: int) -> list[tuple[Expression, ...]]:
    """Clause lists for an NNF expression; each clause is a tuple of literals."""
    if isinstance(expr, (Primitive, Not)):
        return [(expr,)]
    if isinstance(expr, And):
        left = _cnf_clause_lists(expr.left, max_clauses)
        right = _cnf_clause_lists(expr.right, max_clauses)
        if len(left) + len(right) > max_clauses:
            raise SizeExceededError(
                f"CNF needs {len(left) + len(right)} clauses, budget is {max_clauses}"
            )
        return left + right
    if isinstance(expr, Or):
        left = _cnf_clause_lists(expr.left, max_clauses)
        right = _cnf_clause_lists(expr.right, max_clauses)
        if len(left) * len(right) > max_clauses:
            raise SizeExceededError(
                f"CNF distribution yields {len(left) * len(right)} clauses, budget is {max_clauses}"
            )
        return [lc + rc for lc in left for rc in right]
    raise TypeError(f"not an NNF node: {expr!r}")


def to_cnf(expr: Expression, max_clauses: int = 4096) -> Expression:
    """Equivalent AND of ORs of literals, by NNF then distribution.

    Raises :class:`SizeExceededError` as soon as any intermediate product
    would exceed ``max_clauses`` clauses.
    """
    if max_clauses < 1:
        raise ValueError("max_clauses must be >= 1")
    clauses = _cnf_clause_lists(to_nnf(expr), max_clauses)
    return _fold(And, [_fold(Or, clause) for clause in clauses])


def _is_literal(expr: Expression) -> bool:
    return isinstance(expr, Primitive) or (
        isinstance(expr, Not) and isinstance(expr.child, Primitive)
    )


def _is_clause(expr: Expression) -> bool:
    if _is_literal(expr):
        return True
    return isinstance(expr, Or) and _is_clause(expr.left) and _is_clause(expr.right)


def is_cnf(expr: Expression) -> bool:
    """True when the tree is an AND of ORs of (possibly negated) primitives."""
    if _is_clause(expr):
        return True
    return isinstance(expr, And) and is_cnf(expr.left) and is_cnf(expr.right)


def cnf_clauses(expr: Expression) -> list[Expression]:
    """The clause subtrees of a CNF expression, left to right."""
    if not is_cnf(expr):
        raise ValueError("expression is not in CNF")
    if not isinstance(expr, And) or _is_clause(expr):
        return [expr]
    return cnf_clauses(expr.left) + cnf_clauses(expr.right)


# ---------------------------------------------------------------------------
# random generation (all draws flow through the caller's stream)


def random_expression(
    primitives: Sequence[str],
    rng: np.random.Generator,
    max_depth: int = 8,
    leaf_prob: float = 0.3,
) -> Expression:
    """Random expression tree over the given primitive names."""
    if not primitives:
        raise InsufficientPrimitivesError("need at least one primitive name")

    def build(depth: int) -> Expression:
        if depth >= max_depth or rng.random() < leaf_prob:
            return Primitive(primitives[int(rng.integers(len(primitives)))])
        r = rng.random()
        if r < 0.25:
            return Not(build(depth + 1))
        if r < 0.625:
            return And(build(depth + 1), build(depth + 1))
        return Or(build(depth + 1), build(depth + 1))

    return build(0)


def random_cnf(
    primitives: Sequence[str],
    c: int,
    clause_width: int = 2,
    allow_negation: bool = False,
    rng: np.random.Generator | None = None,
) -> Expression:
    """AND of exactly ``c`` clauses over distinct primitive subsets of ``clause_width``."""
    if c < 1:
        raise ValueError("complexity c must be >= 1")
    if rng is None:
        raise ValueError("rng is required")
    m = len(primitives)
    if clause_width > m or math.comb(m, clause_width) < c:
        raise InsufficientPrimitivesError(
            f"cannot draw {c} distinct width-{clause_width} clauses from {m} primitives"
        )
    combos = list(itertools.combinations(range(m), clause_width))
    picks = rng.choice(len(combos), size=c, replace=False)
    clauses = []
    for k in picks:
        lits: list[Expression] = []
        for idx in combos[int(k)]:
            lit: Expression = Primitive(primitives[idx])
            if allow_negation and rng.random() < 0.5:
                lit = Not(lit)
            lits.append(lit)
        clauses.append(_fold(Or, lits) if len(lits) > 1 else lits[0])
    return _fold(And, clauses) if len(clauses) > 1 else clauses[0]


def random_cnf_from_clauses(
    clauses: Sequence[Expression], c: int, rng: np.random.Generator
) -> Expression:
    """AND of ``c`` distinct clauses drawn from an existing clause pool."""
    if c < 1:
        raise ValueError("complexity c must be >= 1")
    if c > len(clauses):
        raise InsufficientPrimitivesError(
            f"cannot draw {c} distinct clauses from a pool of {len(clauses)}"
        )
    picks = rng.choice(len(clauses), size=c, replace=False)
    chosen = [clauses[int(k)] for k in picks]
    return _fold(And, chosen) if len(chosen) > 1 else chosen[0]


def random_binary_expressions(
    primitives: Sequence[str],
    op: str,
    count: int,
    rng: np.random.Generator,
) -> list[Expression]:
    """``count`` distinct unordered binary ``and``/``or`` expressions."""
    if op not in ("and", "or"):
        raise ValueError(f"op must be 'and' or 'or', got {op!r}")
    pairs = list(itertools.combinations(range(len(primitives)), 2))
    if count > len(pairs):
        raise InsufficientPrimitivesError(
            f"asked for {count} pairs but only {len(pairs)} exist"
        )
    node = And if op == "and" else Or
    picks = rng.choice(len(pairs), size=count, replace=False)
    return [
        node(Primitive(primitives[pairs[int(k)][0]]), Primitive(primitives[pairs[int(k)][1]]))
        for k in picks
    ]


# ---------------------------------------------------------------------------
# text files: one expression per line, '#' comments and blank lines ignored


def load_expressions(path) -> list[Expression]:
    exprs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            exprs.append(parse(line))
    return exprs


def save_expressions(path, exprs: Iterable[Expression]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in exprs:
            fh.write(unparse(e) + "\n")

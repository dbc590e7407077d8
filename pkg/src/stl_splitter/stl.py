"""Signal Temporal Logic syntax: formula trees, a text parser/printer and
structural queries (post-order enumeration, time horizons).

Intervals are expressed in discrete timesteps. ``math.inf`` stands for an
unbounded upper bound everywhere in this package.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Union

import numpy as np

INF = math.inf

__all__ = [
    "INF",
    "Interval",
    "Formula",
    "TrueF",
    "Pred",
    "Not",
    "And",
    "Or",
    "Implies",
    "Always",
    "Eventually",
    "Until",
    "Historically",
    "Once",
    "PredicateBinding",
    "STLSyntaxError",
    "parse_formula",
    "format_formula",
    "time_horizon",
    "subformulas",
    "predicate_names",
    "conjunction",
    "desugar",
]


@dataclass(frozen=True)
class Interval:
    """Closed timestep interval ``[lo, hi]``; ``hi`` may be ``INF``."""

    lo: int
    hi: Union[int, float] = INF

    def __post_init__(self):
        if isinstance(self.lo, bool) or not isinstance(self.lo, (int, np.integer)):
            raise TypeError(f"interval lower bound must be an integer, got {self.lo!r}")
        if self.hi != INF and (
            isinstance(self.hi, bool) or not isinstance(self.hi, (int, np.integer))
        ):
            raise TypeError(f"interval upper bound must be an integer or inf, got {self.hi!r}")
        if self.lo < 0:
            raise ValueError(f"interval lower bound must be non-negative, got {self.lo}")
        if self.hi < self.lo:
            raise ValueError(f"inverted interval [{self.lo},{self.hi}]")
        object.__setattr__(self, "lo", int(self.lo))
        if self.hi != INF:
            object.__setattr__(self, "hi", int(self.hi))

    @property
    def bounded(self) -> bool:
        return self.hi != INF

    @classmethod
    def from_seconds(cls, lo: float, hi: float, dt: float) -> "Interval":
        """Convert an interval in seconds to timesteps; the conversion must be exact."""
        return cls(_exact_steps(lo, dt), INF if hi == INF else _exact_steps(hi, dt))

    def __str__(self) -> str:
        hi = "inf" if self.hi == INF else str(self.hi)
        return f"[{self.lo},{hi}]"


def _exact_steps(seconds: float, dt: float) -> int:
    steps = seconds / dt
    rounded = round(steps)
    if not math.isclose(steps, rounded, rel_tol=0.0, abs_tol=1e-9):
        raise ValueError(f"{seconds} s is not a whole number of {dt} s timesteps")
    return int(rounded)


class Formula:
    """Base class of STL formula nodes. Nodes are immutable and hashable."""

    __slots__ = ()

    def children(self) -> tuple["Formula", ...]:
        return ()

    def __str__(self) -> str:
        return format_formula(self)


@dataclass(frozen=True, repr=False)
class TrueF(Formula):
    def __repr__(self):
        return "TrueF()"


@dataclass(frozen=True, repr=False)
class Pred(Formula):
    name: str

    def __repr__(self):
        return f"Pred({self.name!r})"


@dataclass(frozen=True, repr=False)
class Not(Formula):
    arg: Formula

    def children(self):
        return (self.arg,)

    def __repr__(self):
        return f"Not({self.arg!r})"


@dataclass(frozen=True, repr=False)
class _Binary(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)

    def __repr__(self):
        return f"{type(self).__name__}({self.left!r}, {self.right!r})"


class And(_Binary):
    pass


class Or(_Binary):
    pass


class Implies(_Binary):
    pass


@dataclass(frozen=True, repr=False)
class _Temporal(Formula):
    interval: Interval
    arg: Formula

    def children(self):
        return (self.arg,)

    def __repr__(self):
        return f"{type(self).__name__}({self.interval}, {self.arg!r})"


class Always(_Temporal):
    pass


class Eventually(_Temporal):
    pass


class Historically(_Temporal):
    pass


class Once(_Temporal):
    pass


@dataclass(frozen=True, repr=False)
class Until(Formula):
    interval: Interval
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)

    def __repr__(self):
        return f"Until({self.interval}, {self.left!r}, {self.right!r})"


@dataclass(frozen=True)
class PredicateBinding:
    """A named predicate margin over the combined state; positive means it holds."""

    name: str
    evaluator: Callable[[np.ndarray], float]

    def __call__(self, x) -> float:
        return self.evaluator(x)


def conjunction(parts: Iterable[Formula]) -> Formula:
    """Right-nested conjunction of one or more formulas."""
    parts = list(parts)
    if not parts:
        return TrueF()
    out = parts[-1]
    for f in reversed(parts[:-1]):
        out = And(f, out)
    return out


def desugar(f: Formula) -> Formula:
    """Rewrite Or/Implies into Not/And (used to check the sugar forms)."""
    if isinstance(f, Or):
        return Not(And(Not(desugar(f.left)), Not(desugar(f.right))))
    if isinstance(f, Implies):
        return Not(And(desugar(f.left), Not(desugar(f.right))))
    if isinstance(f, Not):
        return Not(desugar(f.arg))
    if isinstance(f, And):
        return And(desugar(f.left), desugar(f.right))
    if isinstance(f, Until):
        return Until(f.interval, desugar(f.left), desugar(f.right))
    if isinstance(f, _Temporal):
        return type(f)(f.interval, desugar(f.arg))
    return f


# ---------------------------------------------------------------------------
# structural queries


def subformulas(f: Formula) -> list[tuple[int, Formula]]:
    """Post-order enumeration; the node-id is the position in that order."""
    out: list[Formula] = []

    def walk(node):
        for c in node.children():
            walk(c)
        out.append(node)

    walk(f)
    return list(enumerate(out))


def predicate_names(f: Formula) -> set[str]:
    return {node.name for _, node in subformulas(f) if isinstance(node, Pred)}


def time_horizon(f: Formula) -> Union[int, float]:
    """Future lookahead (in steps) needed to settle ``f`` at an index."""
    if isinstance(f, (TrueF, Pred)):
        return 0
    if isinstance(f, Not):
        return time_horizon(f.arg)
    if isinstance(f, _Binary):
        return max(time_horizon(f.left), time_horizon(f.right))
    if isinstance(f, (Always, Eventually)):
        return f.interval.hi + time_horizon(f.arg)
    if isinstance(f, Until):
        return f.interval.hi + max(time_horizon(f.left), time_horizon(f.right))
    if isinstance(f, (Historically, Once)):
        return time_horizon(f.arg)
    raise TypeError(f"not a formula: {f!r}")


# ---------------------------------------------------------------------------
# printing

_PREC_IMPLIES, _PREC_OR, _PREC_AND, _PREC_UNTIL, _PREC_UNARY = 1, 2, 3, 4, 5
_UNARY_KEYWORD = {Always: "G", Eventually: "F", Historically: "H", Once: "O"}


def _prec(f: Formula) -> int:
    if isinstance(f, Implies):
        return _PREC_IMPLIES
    if isinstance(f, Or):
        return _PREC_OR
    if isinstance(f, And):
        return _PREC_AND
    if isinstance(f, Until):
        return _PREC_UNTIL
    return _PREC_UNARY


def format_formula(f: Formula) -> str:
    """Print ``f`` in the concrete syntax accepted by :func:`parse_formula`."""

    def wrap(node, min_prec):
        s = fmt(node)
        return f"({s})" if _prec(node) < min_prec else s

    def fmt(node):
        if isinstance(node, TrueF):
            return "true"
        if isinstance(node, Pred):
            return node.name
        if isinstance(node, Not):
            return "not " + wrap(node.arg, _PREC_UNARY)
        if isinstance(node, _Temporal):
            return f"{_UNARY_KEYWORD[type(node)]}{node.interval} " + wrap(node.arg, _PREC_UNARY)
        if isinstance(node, Until):
            return (
                wrap(node.left, _PREC_UNTIL)
                + f" U{node.interval} "
                + wrap(node.right, _PREC_UNTIL + 1)
            )
        if isinstance(node, Implies):
            return wrap(node.left, _PREC_IMPLIES + 1) + " -> " + wrap(node.right, _PREC_IMPLIES)
        op = "and" if isinstance(node, And) else "or"
        p = _prec(node)
        return wrap(node.left, p) + f" {op} " + wrap(node.right, p + 1)

    return fmt(f)


# ---------------------------------------------------------------------------
# parsing


class STLSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<arrow>->)
  | (?P<number>\d+(?:\.\d*)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[()\[\],])
    """,
    re.VERBOSE,
)
_KEYWORDS = {"true", "not", "and", "or", "inf", "G", "F", "H", "O", "U"}
_UNARY_TEMPORAL = {"G": Always, "F": Eventually, "H": Historically, "O": Once}


@dataclass
class _Token:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise STLSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        chunk = m.group()
        if kind == "ws":
            for k, ch in enumerate(chunk):
                if ch == "\n":
                    line += 1
                    line_start = pos + k + 1
        else:
            if kind == "ident" and chunk in _KEYWORDS:
                kind = chunk
            elif kind in ("arrow", "punct"):
                kind = chunk
            tokens.append(_Token(kind, chunk, line, pos - line_start + 1))
        pos = m.end()
    tokens.append(_Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text, predicate_table):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.predicates = predicate_table

    @property
    def tok(self) -> _Token:
        return self.tokens[self.pos]

    def error(self, message, tok=None):
        tok = tok or self.tok
        return STLSyntaxError(message, tok.line, tok.col)

    def expect(self, kind):
        if self.tok.kind != kind:
            found = self.tok.text or "end of input"
            raise self.error(f"expected {kind!r}, found {found!r}")
        tok = self.tok
        self.pos += 1
        return tok

    def parse(self):
        f = self.implies()
        if self.tok.kind != "eof":
            raise self.error(f"unexpected {self.tok.text!r}")
        return f

    def implies(self):
        left = self.disjunction()
        if self.tok.kind == "->":
            self.pos += 1
            return Implies(left, self.implies())
        return left

    def disjunction(self):
        left = self.conjunction()
        while self.tok.kind == "or":
            self.pos += 1
            left = Or(left, self.conjunction())
        return left

    def conjunction(self):
        left = self.until()
        while self.tok.kind == "and":
            self.pos += 1
            left = And(left, self.until())
        return left

    def until(self):
        left = self.unary()
        while self.tok.kind == "U":
            self.pos += 1
            interval = self.interval()
            left = Until(interval, left, self.unary())
        return left

    def unary(self):
        tok = self.tok
        if tok.kind == "not":
            self.pos += 1
            return Not(self.unary())
        if tok.kind in _UNARY_TEMPORAL:
            self.pos += 1
            interval = self.interval()
            return _UNARY_TEMPORAL[tok.kind](interval, self.unary())
        if tok.kind == "(":
            self.pos += 1
            f = self.implies()
            self.expect(")")
            return f
        if tok.kind == "true":
            self.pos += 1
            return TrueF()
        if tok.kind == "ident":
            self.pos += 1
            if self.predicates is not None and tok.text not in self.predicates:
                raise self.error(f"unknown predicate {tok.text!r}", tok)
            return Pred(tok.text)
        found = tok.text or "end of input"
        raise self.error(f"expected a formula, found {found!r}")

    def bound(self, allow_inf):
        tok = self.tok
        if tok.kind == "inf" and allow_inf:
            self.pos += 1
            return INF
        if tok.kind != "number":
            raise self.error("expected a non-negative integer bound")
        if "." in tok.text:
            raise self.error(f"interval bounds are whole timesteps, got {tok.text}")
        self.pos += 1
        return int(tok.text)

    def interval(self):
        start = self.expect("[")
        lo = self.bound(allow_inf=False)
        self.expect(",")
        hi = self.bound(allow_inf=True)
        self.expect("]")
        if hi < lo:
            raise self.error(f"inverted interval [{lo},{hi}]", start)
        return Interval(lo, hi)


def parse_formula(text: str, predicate_table: Iterable[str] | None = None) -> Formula:
    """Parse the textual STL syntax.

    ``predicate_table`` lists admissible predicate names; ``None`` accepts any
    identifier. Errors raise :class:`STLSyntaxError` carrying line/column.
    """
    table = None if predicate_table is None else set(predicate_table)
    return _Parser(text, table).parse()


def iter_nodes(f: Formula) -> Iterator[Formula]:
    for _, node in subformulas(f):
        yield node

"""STL formulas: text parser, AST, task extraction/ranking and a discrete-time monitor.

Grammar (whitespace-insensitive)::

    formula := until ('&' until)*
    until   := unary ('U' window unary)*
    unary   := '!' unary | 'F' window unary | 'G' window unary | atom
    atom    := 'true' | 'mu' INT | '(' formula ')'
    window  := '[' NUMBER ',' NUMBER ']'

Conjunction and until are left-associative.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np


class STLSyntaxError(ValueError):
    def __init__(self, msg: str, pos: int):
        super().__init__(f"{msg} (at position {pos})")
        self.pos = pos


class InsufficientTraceError(ValueError):
    """The trace is too short to decide the verdict."""


class ScenarioError(ValueError):
    pass


# -- AST ---------------------------------------------------------------------

@dataclass(frozen=True)
class TrueF:
    pass


@dataclass(frozen=True)
class Pred:
    id: int


@dataclass(frozen=True)
class Not:
    child: object


@dataclass(frozen=True)
class And:
    children: tuple


@dataclass(frozen=True)
class Eventually:
    t0: float
    t1: float
    child: object


@dataclass(frozen=True)
class Always:
    t0: float
    t1: float
    child: object


@dataclass(frozen=True)
class Until:
    t0: float
    t1: float
    left: object
    right: object


def _num(x: float) -> str:
    return repr(int(x)) if float(x).is_integer() else repr(float(x))


def to_text(node) -> str:
    """Pretty-print; the output reparses to an identical AST."""
    if isinstance(node, TrueF):
        return "true"
    if isinstance(node, Pred):
        return f"mu{node.id}"
    if isinstance(node, Not):
        return f"!{_wrap(node.child)}"
    if isinstance(node, And):
        return " & ".join(_wrap(c, allow_until=True) for c in node.children)
    if isinstance(node, Eventually):
        return f"F[{_num(node.t0)},{_num(node.t1)}] {_wrap(node.child)}"
    if isinstance(node, Always):
        return f"G[{_num(node.t0)},{_num(node.t1)}] {_wrap(node.child)}"
    if isinstance(node, Until):
        return f"{_wrap(node.left, allow_until=True)} U[{_num(node.t0)},{_num(node.t1)}] {_wrap(node.right)}"
    raise TypeError(f"not an STL node: {node!r}")


def _wrap(node, allow_until: bool = False) -> str:
    s = to_text(node)
    if isinstance(node, And) or (isinstance(node, Until) and not allow_until):
        return f"({s})"
    return s


# -- parser --------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<pred>mu\d+)|(?P<kw>true|F|G|U)|(?P<sym>[\[\],&!()]))"
)


def _tokenize(text: str):
    toks, pos = [], 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise STLSyntaxError(f"unexpected character {text[pos:].lstrip()[:1]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        toks.append((kind, m.group(kind), start))
        pos = m.end()
    toks.append(("eof", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str, known: set[int] | None):
        self.toks = _tokenize(text)
        self.i = 0
        self.known = known

    def peek(self):
        return self.toks[self.i]

    def take(self, value=None, kind=None):
        tok = self.toks[self.i]
        if (value is not None and tok[1] != value) or (kind is not None and tok[0] != kind):
            want = value if value is not None else kind
            got = tok[1] or "end of input"
            raise STLSyntaxError(f"expected {want!r}, got {got!r}", tok[2])
        self.i += 1
        return tok

    def formula(self):
        parts = [self.until()]
        while self.peek()[1] == "&":
            self.take("&")
            parts.append(self.until())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def until(self):
        left = self.unary()
        while self.peek()[1] == "U":
            self.take("U")
            a, b = self.window()
            left = Until(a, b, left, self.unary())
        return left

    def window(self):
        start = self.take("[")[2]
        a = float(self.take(kind="num")[1])
        self.take(",")
        b = float(self.take(kind="num")[1])
        self.take("]")
        if a > b:
            raise STLSyntaxError(f"reversed time window [{_num(a)},{_num(b)}]", start)
        return a, b

    def unary(self):
        kind, val, pos = self.peek()
        if val == "!":
            self.take()
            return Not(self.unary())
        if val in ("F", "G"):
            self.take()
            a, b = self.window()
            child = self.unary()
            return Eventually(a, b, child) if val == "F" else Always(a, b, child)
        return self.atom()

    def atom(self):
        kind, val, pos = self.peek()
        if val == "true":
            self.take()
            return TrueF()
        if kind == "pred":
            self.take()
            pid = int(val[2:])
            if self.known is not None and pid not in self.known:
                raise STLSyntaxError(f"unknown predicate {val!r}", pos)
            return Pred(pid)
        if val == "(":
            self.take("(")
            node = self.formula()
            if self.peek()[1] != ")":
                raise STLSyntaxError("unbalanced parentheses", self.peek()[2])
            self.take(")")
            return node
        raise STLSyntaxError(f"unexpected {val or 'end of input'!r}", pos)


def parse(text: str, predicates: Sequence[int] | None = None):
    """Parse formula text.  ``predicates`` (ids) enables unknown-name checks."""
    p = _Parser(text, None if predicates is None else set(predicates))
    node = p.formula()
    kind, val, pos = p.peek()
    if kind != "eof":
        msg = "unbalanced parentheses" if val == ")" else f"trailing input {val!r}"
        raise STLSyntaxError(msg, pos)
    return node


# -- traces and monitoring -------------------------------------------------------

@dataclass(frozen=True)
class Trace:
    times: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.positions, dtype=float)
        if t.ndim != 1 or len(t) == 0 or len(p) != len(t):
            raise ValueError("times and positions must have equal, nonzero length")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("times must start at 0 and increase strictly")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", p)


_EPS = 1e-9


def _window(times, t, a, b):
    lo = np.searchsorted(times, t + a - _EPS, side="left")
    hi = np.searchsorted(times, t + b + _EPS, side="right")
    covered = times[-1] >= t + b - _EPS
    return lo, hi, covered


def _eval(node, trace: Trace, table: Mapping[int, Callable], i: int, cache: dict):
    """Three-valued evaluation at sample ``i``: True, False or None (undecided)."""
    times = trace.times
    if isinstance(node, TrueF):
        return True
    if isinstance(node, Pred):
        key = node.id
        if key not in cache:
            h = table[node.id]
            cache[key] = np.array([h(p) for p in trace.positions]) >= 0.0
        return bool(cache[key][i])
    if isinstance(node, Not):
        v = _eval(node.child, trace, table, i, cache)
        return None if v is None else not v
    if isinstance(node, And):
        vals = [_eval(c, trace, table, i, cache) for c in node.children]
        if any(v is False for v in vals):
            return False
        return None if any(v is None for v in vals) else True
    if isinstance(node, (Eventually, Always)):
        lo, hi, covered = _window(times, times[i], node.t0, node.t1)
        vals = [_eval(node.child, trace, table, j, cache) for j in range(lo, hi)]
        if isinstance(node, Eventually):
            if any(v is True for v in vals):
                return True
            return False if covered and all(v is False for v in vals) else None
        if any(v is False for v in vals):
            return False
        return True if covered and all(v is True for v in vals) else None
    if isinstance(node, Until):
        lo, hi, covered = _window(times, times[i], node.t0, node.t1)
        left_ok = True  # phi1 on every sample of [t, t_j]
        undecided = False
        for j in range(i, hi):
            lv = _eval(node.left, trace, table, j, cache)
            if lv is None:
                undecided = True
            if lv is False:
                left_ok = False
            if j >= lo:
                rv = _eval(node.right, trace, table, j, cache)
                if rv is True and lv is True and left_ok and not undecided:
                    return True
                if rv is None:
                    undecided = True
            if not left_ok:
                return None if undecided else False
        if not covered:
            return None
        return None if undecided else False
    raise TypeError(f"not an STL node: {node!r}")


def satisfies(ast, trace: Trace, predicates: Mapping[int, Callable], t: float = 0.0) -> bool:
    """Discrete-time satisfaction at sample time ``t``.

    Quantifiers range over samples whose times fall in the closed window.  A
    verdict that depends on samples past the end of the trace raises
    :class:`InsufficientTraceError`; verdicts already decided by the recorded
    samples (a witness for F, a counterexample for G) are returned.
    """
    idx = np.flatnonzero(np.abs(trace.times - t) <= _EPS)
    if len(idx) == 0:
        raise InsufficientTraceError(f"t={t} is not a sample time of the trace")
    v = _eval(ast, trace, predicates, int(idx[0]), {})
    if v is None:
        raise InsufficientTraceError("formula window exceeds the trace horizon")
    return v


# -- planner front-end ---------------------------------------------------------

@dataclass(frozen=True)
class Literal:
    """A predicate, possibly negated (h -> -h)."""

    id: int
    negated: bool = False

    def text(self) -> str:
        return ("!" if self.negated else "") + f"mu{self.id}"


@dataclass(frozen=True)
class TaskSpec:
    id: int
    operator: str  # "F", "G" or "U"
    window: tuple
    region: Literal
    priority_rank: int | None = None
    until_second_region: Literal | None = None

    def __post_init__(self):
        if self.operator not in ("F", "G", "U"):
            raise ScenarioError(f"unsupported operator {self.operator!r}")
        t0, t1 = self.window
        if not (0 <= t0 < t1):
            raise ScenarioError(f"task {self.id}: window must satisfy 0 <= t0 < t1, got {self.window}")
        if (self.operator == "U") != (self.until_second_region is not None):
            raise ScenarioError(f"task {self.id}: only until tasks carry a second region")

    @property
    def t0(self) -> float:
        return float(self.window[0])

    @property
    def t1(self) -> float:
        return float(self.window[1])

    def formula(self):
        lit = _literal_node(self.region)
        if self.operator == "F":
            return Eventually(self.t0, self.t1, lit)
        if self.operator == "G":
            return Always(self.t0, self.t1, lit)
        return Until(self.t0, self.t1, lit, _literal_node(self.until_second_region))


def _literal_node(lit: Literal):
    return Not(Pred(lit.id)) if lit.negated else Pred(lit.id)


def _as_literal(node):
    if isinstance(node, Pred):
        return Literal(node.id)
    if isinstance(node, Not) and isinstance(node.child, Pred):
        return Literal(node.child.id, negated=True)
    return None


class PlannerError(ScenarioError):
    pass


def tasks_from_formula(ast) -> list[TaskSpec]:
    """Split a top-level conjunction of simple F/G/U conjuncts into tasks.

    Task ids follow the order of appearance.  Nested temporal operators,
    negated temporal formulas and bare predicates are rejected.
    """
    conjuncts = list(ast.children) if isinstance(ast, And) else [ast]
    tasks = []
    for k, c in enumerate(conjuncts, start=1):
        if isinstance(c, (Eventually, Always)):
            lit = _as_literal(c.child)
            if lit is None:
                raise PlannerError(f"conjunct {k} ({to_text(c)}): only a predicate or a negated predicate may follow F/G")
            tasks.append(TaskSpec(k, "F" if isinstance(c, Eventually) else "G", (c.t0, c.t1), lit))
        elif isinstance(c, Until):
            a, b = _as_literal(c.left), _as_literal(c.right)
            if a is None or b is None:
                raise PlannerError(f"conjunct {k} ({to_text(c)}): until operands must be predicates")
            tasks.append(TaskSpec(k, "U", (c.t0, c.t1), a, until_second_region=b))
        else:
            raise PlannerError(f"conjunct {k} ({to_text(c)}): expected an F, G or U task at the top level")
    return tasks


def rank_tasks(tasks: Sequence[TaskSpec], explicit_ranks: Sequence[int] | None = None) -> list[TaskSpec]:
    """Order tasks by priority and stamp ``priority_rank`` 1..J.

    Without explicit ranks this is a stable ascending sort on the window end
    time, so tasks that must finish earlier come first.
    """
    tasks = list(tasks)
    if explicit_ranks is None:
        given = [t.priority_rank for t in tasks]
        explicit_ranks = given if all(r is not None for r in given) and tasks else None
    if explicit_ranks is not None:
        if len(explicit_ranks) != len(tasks):
            raise ScenarioError("one explicit rank per task is required")
        if len(set(explicit_ranks)) != len(explicit_ranks):
            raise ScenarioError(f"duplicate explicit ranks {list(explicit_ranks)}")
        order = sorted(range(len(tasks)), key=lambda i: explicit_ranks[i])
    else:
        order = sorted(range(len(tasks)), key=lambda i: tasks[i].t1)
    return [replace(tasks[i], priority_rank=r) for r, i in enumerate(order, start=1)]


__all__ = [
    "TrueF", "Pred", "Not", "And", "Eventually", "Always", "Until", "parse", "to_text",
    "Trace", "satisfies", "TaskSpec", "Literal", "tasks_from_formula", "rank_tasks",
    "STLSyntaxError", "InsufficientTraceError", "ScenarioError", "PlannerError",
]

"""Expression trees used throughout the modeling language.

Expressions appear wherever a model supplies a value: attribute defaults,
transmission probabilities and distances, trigger rates, guards, eligibility
criteria, rewards, and output series.  The tree is deliberately small:
literals, attribute references, state tests, population aggregates,
arithmetic, comparisons, and boolean connectives.

Values carry one of five kinds: integer, real, boolean, text, identifier.
``identifier`` is a symbolic flavor of text (written as a quoted string in
the concrete syntax); integers promote to reals where needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

from .errors import EvalError, ExprTypeError
from .source import SourceSpan

INTEGER = "integer"
REAL = "real"
BOOLEAN = "boolean"
TEXT = "text"
IDENTIFIER = "identifier"

KINDS = (INTEGER, REAL, BOOLEAN, TEXT, IDENTIFIER)
NUMERIC = (INTEGER, REAL)

ARITH_OPS = ("+", "-", "*", "/")
COMPARE_OPS = ("==", "!=", "<", "<=", ">", ">=")
BOOL_OPS = ("and", "or")


@dataclass
class Literal:
    value: object
    kind: str
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class AttrRef:
    """Reference ``name`` or ``Owner.name``; also resolves builtins like ``tick``."""

    owner: str | None
    name: str
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class StateTest:
    """``<machine> is <state>`` — true when the named disease or state machine
    of the context agent currently sits in the given state."""

    machine: str
    state: str
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class Aggregate:
    """``count(Type [where p])`` or ``sum(Type [where p], value)`` over a population."""

    func: str  # "count" | "sum"
    population: str
    predicate: "Expr | None"
    value: "Expr | None"
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class Unary:
    op: str  # "-" | "not"
    operand: "Expr"
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class Binary:
    op: str
    left: "Expr"
    right: "Expr"
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


Expr = Union[Literal, AttrRef, StateTest, Aggregate, Unary, Binary]


def lit(value: object) -> Literal:
    """Literal from a plain Python value (convenience for programmatic models)."""
    if isinstance(value, bool):
        return Literal(value, BOOLEAN)
    if isinstance(value, int):
        return Literal(value, INTEGER)
    if isinstance(value, float):
        return Literal(value, REAL)
    if isinstance(value, str):
        return Literal(value, TEXT)
    raise TypeError(f"no literal kind for {type(value).__name__}")


# ---------------------------------------------------------------------------
# Evaluation


class Context:
    """Resolution hooks for evaluation.

    The engine provides world/agent/entity implementations; tests may use
    :class:`MapContext`.  All hooks raise :class:`EvalError` for unknown names.
    """

    def attribute(self, owner: str | None, name: str):
        raise EvalError(f"unknown attribute '{_dotted(owner, name)}'")

    def machine_state(self, name: str) -> str:
        raise EvalError(f"no state machine or disease named '{name}' in this context")

    def population(self, type_name: str) -> Iterable["Context"]:
        raise EvalError(f"unknown population '{type_name}'")


class MapContext(Context):
    """Context backed by plain dicts; useful for unit tests and defaults."""

    def __init__(
        self,
        attrs: Mapping[str, object] | None = None,
        states: Mapping[str, str] | None = None,
        populations: Mapping[str, list["Context"]] | None = None,
        owner: str | None = None,
    ):
        self._attrs = dict(attrs or {})
        self._states = dict(states or {})
        self._pops = dict(populations or {})
        self._owner = owner

    def attribute(self, owner: str | None, name: str):
        if owner is not None and owner != self._owner:
            raise EvalError(f"unknown attribute '{_dotted(owner, name)}'")
        if name in self._attrs:
            return self._attrs[name]
        raise EvalError(f"unknown attribute '{name}'")

    def machine_state(self, name: str) -> str:
        if name in self._states:
            return self._states[name]
        raise EvalError(f"no state machine or disease named '{name}' in this context")

    def population(self, type_name: str) -> Iterable[Context]:
        if type_name in self._pops:
            return self._pops[type_name]
        raise EvalError(f"unknown population '{type_name}'")


def _dotted(owner: str | None, name: str) -> str:
    return name if owner is None else f"{owner}.{name}"


def evaluate(expr: Expr, ctx: Context):
    """Evaluate ``expr`` against ``ctx``; raises EvalError on any failure."""
    if isinstance(expr, Literal):
        return expr.value
    if isinstance(expr, AttrRef):
        try:
            return ctx.attribute(expr.owner, expr.name)
        except EvalError as e:
            raise EvalError(e.message, e.span or expr.span) from None
    if isinstance(expr, StateTest):
        try:
            return ctx.machine_state(expr.machine) == expr.state
        except EvalError as e:
            raise EvalError(e.message, e.span or expr.span) from None
    if isinstance(expr, Aggregate):
        return _evaluate_aggregate(expr, ctx)
    if isinstance(expr, Unary):
        v = evaluate(expr.operand, ctx)
        if expr.op == "-":
            return -_as_number(v, expr)
        return not _as_bool(v, expr)
    if isinstance(expr, Binary):
        return _evaluate_binary(expr, ctx)
    raise EvalError(f"unknown expression node {type(expr).__name__}")


def _evaluate_aggregate(expr: Aggregate, ctx: Context):
    total: float | int = 0
    count = 0
    for member in ctx.population(expr.population):
        if expr.predicate is not None and not _as_bool(evaluate(expr.predicate, member), expr):
            continue
        if expr.func == "count":
            count += 1
        else:
            total += _as_number(evaluate(expr.value, member), expr)
    return count if expr.func == "count" else total


def _evaluate_binary(expr: Binary, ctx: Context):
    op = expr.op
    if op in BOOL_OPS:
        left = _as_bool(evaluate(expr.left, ctx), expr)
        if op == "and":
            return left and _as_bool(evaluate(expr.right, ctx), expr)
        return left or _as_bool(evaluate(expr.right, ctx), expr)
    left = evaluate(expr.left, ctx)
    right = evaluate(expr.right, ctx)
    if op in ("==", "!="):
        eq = left == right
        return eq if op == "==" else not eq
    if op in ("<", "<=", ">", ">="):
        ln, rn = _as_number(left, expr), _as_number(right, expr)
        return {"<": ln < rn, "<=": ln <= rn, ">": ln > rn, ">=": ln >= rn}[op]
    ln, rn = _as_number(left, expr), _as_number(right, expr)
    if op == "+":
        return ln + rn
    if op == "-":
        return ln - rn
    if op == "*":
        return ln * rn
    if op == "/":
        if rn == 0:
            raise EvalError("division by zero", expr.span)
        return ln / rn
    raise EvalError(f"unknown operator '{op}'", expr.span)


def _as_number(v, node) -> float | int:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise EvalError(f"expected a number, got {type(v).__name__}", getattr(node, "span", None))
    return v


def _as_bool(v, node) -> bool:
    if not isinstance(v, bool):
        raise EvalError(f"expected a boolean, got {type(v).__name__}", getattr(node, "span", None))
    return v


# ---------------------------------------------------------------------------
# Static typing


@dataclass
class TypeEnv:
    """What names mean at one evaluation site.

    attributes     bare-name kinds (declared attributes of the context type)
    owner          type name the context belongs to (None for world contexts)
    machines       disease/machine name -> set of state names valid here
    populations    aggregate target type -> member TypeEnv
    builtins       extra read-only numerics (tick, stopped, ...)
    allow_aggregates  False in per-element defaults and value sources
    """

    attributes: Mapping[str, str] = field(default_factory=dict)
    owner: str | None = None
    machines: Mapping[str, frozenset] = field(default_factory=dict)
    populations: Mapping[str, "TypeEnv"] = field(default_factory=dict)
    builtins: Mapping[str, str] = field(default_factory=dict)
    allow_aggregates: bool = True


def infer_type(expr: Expr, env: TypeEnv) -> str:
    """Return the kind of ``expr`` under ``env`` or raise ExprTypeError."""
    if isinstance(expr, Literal):
        return expr.kind
    if isinstance(expr, AttrRef):
        if expr.owner is not None and expr.owner != env.owner:
            raise ExprTypeError(
                f"'{expr.owner}.{expr.name}' does not resolve in this context", expr.span
            )
        if expr.name in env.attributes:
            return env.attributes[expr.name]
        if expr.owner is None and expr.name in env.builtins:
            return env.builtins[expr.name]
        raise ExprTypeError(f"unknown attribute '{expr.name}'", expr.span)
    if isinstance(expr, StateTest):
        states = env.machines.get(expr.machine)
        if states is None:
            raise ExprTypeError(
                f"no state machine or disease named '{expr.machine}' in this context", expr.span
            )
        if expr.state not in states:
            raise ExprTypeError(
                f"'{expr.state}' is not a state of '{expr.machine}'", expr.span
            )
        return BOOLEAN
    if isinstance(expr, Aggregate):
        if not env.allow_aggregates:
            raise ExprTypeError("aggregates are not allowed in this context", expr.span)
        member = env.populations.get(expr.population)
        if member is None:
            raise ExprTypeError(f"unknown population '{expr.population}'", expr.span)
        if expr.predicate is not None and infer_type(expr.predicate, member) != BOOLEAN:
            raise ExprTypeError("aggregate filter must be boolean", expr.span)
        if expr.func == "count":
            return INTEGER
        vkind = infer_type(expr.value, member)
        if vkind not in NUMERIC:
            raise ExprTypeError("sum requires a numeric value expression", expr.span)
        return vkind
    if isinstance(expr, Unary):
        inner = infer_type(expr.operand, env)
        if expr.op == "-":
            if inner not in NUMERIC:
                raise ExprTypeError("unary '-' requires a number", expr.span)
            return inner
        if inner != BOOLEAN:
            raise ExprTypeError("'not' requires a boolean", expr.span)
        return BOOLEAN
    if isinstance(expr, Binary):
        return _infer_binary(expr, env)
    raise ExprTypeError(f"unknown expression node {type(expr).__name__}")


def _infer_binary(expr: Binary, env: TypeEnv) -> str:
    lk = infer_type(expr.left, env)
    rk = infer_type(expr.right, env)
    op = expr.op
    if op in BOOL_OPS:
        if lk != BOOLEAN or rk != BOOLEAN:
            raise ExprTypeError(f"'{op}' requires boolean operands", expr.span)
        return BOOLEAN
    if op in ("==", "!="):
        if not _comparable(lk, rk):
            raise ExprTypeError(f"cannot compare {lk} with {rk}", expr.span)
        return BOOLEAN
    if op in ("<", "<=", ">", ">="):
        if lk not in NUMERIC or rk not in NUMERIC:
            raise ExprTypeError(f"'{op}' requires numeric operands", expr.span)
        return BOOLEAN
    if lk not in NUMERIC or rk not in NUMERIC:
        raise ExprTypeError(f"'{op}' requires numeric operands", expr.span)
    if op == "/":
        return REAL
    return REAL if REAL in (lk, rk) else INTEGER


def _comparable(lk: str, rk: str) -> bool:
    if lk in NUMERIC and rk in NUMERIC:
        return True
    text_like = (TEXT, IDENTIFIER)
    if lk in text_like and rk in text_like:
        return True
    return lk == rk


def assignable(value_kind: str, target_kind: str) -> bool:
    """May a value of ``value_kind`` initialize an attribute of ``target_kind``?"""
    if value_kind == target_kind:
        return True
    if target_kind == REAL and value_kind == INTEGER:
        return True
    if target_kind == IDENTIFIER and value_kind == TEXT:
        return True
    return False


def walk(expr: Expr):
    """Yield every node of the tree, preorder."""
    yield expr
    if isinstance(expr, Aggregate):
        if expr.predicate is not None:
            yield from walk(expr.predicate)
        if expr.value is not None:
            yield from walk(expr.value)
    elif isinstance(expr, Unary):
        yield from walk(expr.operand)
    elif isinstance(expr, Binary):
        yield from walk(expr.left)
        yield from walk(expr.right)


def literal_number(expr: Expr) -> float | None:
    """The numeric value of a (possibly negated) literal, else None."""
    if isinstance(expr, Literal) and expr.kind in NUMERIC:
        return expr.value  # type: ignore[return-value]
    if isinstance(expr, Unary) and expr.op == "-":
        inner = literal_number(expr.operand)
        return None if inner is None else -inner
    return None

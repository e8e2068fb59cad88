"""Triggered state machines: the shared substrate for signal plans and diseases.

Semantics are tick-synchronous.  Each step examines the outgoing transitions
of the current state in declaration order and takes the first one whose guard
holds and whose trigger fires; at most one transition happens per step.  A
fired transition with an abortion clause is redirected to the abort state with
the configured probability (this is how death-on-leaving-a-compartment works).
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Union

from . import expr as ex
from .errors import AbmsError, EvalError
from .source import SourceSpan

DEAD_STATE = "Dead"


@dataclass
class ProbabilisticTrigger:
    """Fires with per-tick probability ``rate`` (a Bernoulli draw each step)."""

    rate: ex.Expr
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class DeterministicTrigger:
    """Fires once the instance has spent ``ticks`` steps in the state."""

    ticks: ex.Expr
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class ConditionalTrigger:
    """Fires on any step where ``condition`` evaluates to true."""

    condition: ex.Expr
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class CompositeTrigger:
    """Combines sub-triggers: ``all_of`` fires when every part fires this step,
    ``any_of`` when at least one does."""

    mode: str  # "all_of" | "any_of"
    parts: list["Trigger"]
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class InteractionTrigger:
    """Marker for disease transmission edges; never fires from within step()
    (the engine applies infections directly)."""

    span: SourceSpan | None = field(default=None, compare=False, repr=False)


Trigger = Union[
    ProbabilisticTrigger,
    DeterministicTrigger,
    ConditionalTrigger,
    CompositeTrigger,
    InteractionTrigger,
]


@dataclass
class Abortion:
    probability: ex.Expr
    abort_to: str
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class Transition:
    source: str
    target: str
    trigger: Trigger | None  # None only in structural skeletons
    guard: ex.Expr | None = None
    abortion: Abortion | None = None
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class StateMachineSpec:
    name: str
    states: list[str]
    initial: str
    transitions: list[Transition]
    span: SourceSpan | None = field(default=None, compare=False, repr=False)

    def transitions_from(self, state: str) -> list[Transition]:
        return [t for t in self.transitions if t.source == state]


@dataclass
class MachineInstance:
    """Per-agent runtime state of one machine."""

    spec: StateMachineSpec
    current: str
    dwell: int = 0
    terminated: bool = False

    def clone(self) -> "MachineInstance":
        return MachineInstance(self.spec, self.current, self.dwell, self.terminated)


@dataclass(frozen=True)
class Moved:
    source: str
    target: str


@dataclass(frozen=True)
class Aborted:
    source: str
    abort_to: str


TransitionEvent = Union[None, Moved, Aborted]


class MachineError(AbmsError):
    pass


def instantiate(spec: StateMachineSpec) -> MachineInstance:
    """Fresh instance sitting in the initial state with zero dwell."""
    return MachineInstance(spec=spec, current=spec.initial, dwell=0, terminated=False)


def step(instance: MachineInstance, ctx: ex.Context, rng: random.Random) -> TransitionEvent:
    """Advance one tick.  Returns the transition event taken, if any.

    The dwell counter counts steps spent in the current state including the
    current one, so a deterministic trigger of d ticks fires on the d-th step.
    """
    if instance.terminated:
        raise MachineError(f"step() on terminated machine '{instance.spec.name}'")
    instance.dwell += 1
    for tr in instance.spec.transitions_from(instance.current):
        if isinstance(tr.trigger, InteractionTrigger) or tr.trigger is None:
            continue
        if tr.guard is not None and evaluate_condition(tr.guard, ctx) is False:
            continue
        if trigger_fires(tr.trigger, instance.dwell, ctx, rng):
            return _take(instance, tr, ctx, rng)
    return None


def _take(instance: MachineInstance, tr: Transition, ctx: ex.Context, rng: random.Random) -> TransitionEvent:
    source = instance.current
    if tr.abortion is not None:
        p = _rate(tr.abortion.probability, ctx)
        if rng.random() < p:
            instance.current = tr.abortion.abort_to
            instance.dwell = 0
            if instance.current == DEAD_STATE:
                instance.terminated = True
            return Aborted(source, tr.abortion.abort_to)
    instance.current = tr.target
    instance.dwell = 0
    if instance.current == DEAD_STATE:
        instance.terminated = True
    return Moved(source, tr.target)


def force_state(instance: MachineInstance, state: str) -> None:
    """Engine hook: place the instance in ``state`` directly (infection,
    introduction).  Resets dwell; entering Dead terminates."""
    instance.current = state
    instance.dwell = 0
    if state == DEAD_STATE:
        instance.terminated = True


def trigger_fires(trigger: Trigger, dwell: int, ctx: ex.Context, rng: random.Random) -> bool:
    if isinstance(trigger, ProbabilisticTrigger):
        return rng.random() < _rate(trigger.rate, ctx)
    if isinstance(trigger, DeterministicTrigger):
        ticks = ex.evaluate(trigger.ticks, ctx)
        if isinstance(ticks, bool) or not isinstance(ticks, (int, float)) or ticks < 0:
            raise EvalError("deterministic duration must be a non-negative number", trigger.span)
        return dwell >= ticks
    if isinstance(trigger, ConditionalTrigger):
        return evaluate_condition(trigger.condition, ctx)
    if isinstance(trigger, CompositeTrigger):
        # Every part is evaluated (draws included) so composition is order-free.
        results = [trigger_fires(p, dwell, ctx, rng) for p in trigger.parts]
        return all(results) if trigger.mode == "all_of" else any(results)
    if isinstance(trigger, InteractionTrigger):
        return False
    raise MachineError(f"unknown trigger {type(trigger).__name__}")


def evaluate_condition(condition: ex.Expr, ctx: ex.Context) -> bool:
    value = ex.evaluate(condition, ctx)
    if not isinstance(value, bool):
        raise EvalError("condition did not evaluate to a boolean", getattr(condition, "span", None))
    return value


def _rate(rate_expr: ex.Expr, ctx: ex.Context) -> float:
    value = ex.evaluate(rate_expr, ctx)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise EvalError("rate did not evaluate to a number", getattr(rate_expr, "span", None))
    if not 0.0 <= value <= 1.0:
        raise EvalError(f"rate {value} outside [0, 1]", getattr(rate_expr, "span", None))
    return float(value)


def expected_dwell(trigger: Trigger, ctx: ex.Context | None = None) -> float:
    """Mean steps to fire: d for deterministic, 1/rate for probabilistic.

    Undefined (raises ValueError) for conditional, composite, and interaction
    triggers.  Intended as a test oracle helper.
    """
    ctx = ctx or ex.MapContext()
    if isinstance(trigger, DeterministicTrigger):
        value = ex.evaluate(trigger.ticks, ctx)
        return float(value)
    if isinstance(trigger, ProbabilisticTrigger):
        rate = _rate(trigger.rate, ctx)
        return math.inf if rate == 0.0 else 1.0 / rate
    raise ValueError(f"expected dwell undefined for {type(trigger).__name__}")

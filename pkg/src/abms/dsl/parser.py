"""Recursive-descent parser with panic-mode recovery.

The parser never raises on bad input: syntax problems are collected as
:class:`ParseError` values and parsing resumes at the next declaration
keyword, so one pass can report several independent mistakes.  Duplicate
declarations are reported here rather than deferred to validation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .. import disease as dz
from .. import expr as ex
from .. import metamodel as mm
from .. import statemachine as sm
from .. import traffic as tf
from ..errors import AbmsError
from ..source import SourceSpan
from .lexer import Token, tokenize

_ITEM_KEYWORDS = frozenset(
    ["environment", "agent", "entity", "disease", "machine", "plan", "introduce", "output", "concern"]
)
_AGENT_BODY = frozenset(["create", "capability", "attr"])
_DISEASE_BODY = frozenset(
    ["transmission", "duration", "passive", "immunity", "mortality", "states", "initial", "transition"]
)
_MACHINE_BODY = frozenset(["initial", "state", "transition"])
_COMPARE_OPS = ("==", "!=", "<=", ">=", "<", ">")


@dataclass(frozen=True)
class ParseError:
    span: SourceSpan
    expected: tuple[str, ...]
    found: str
    message: str

    def __str__(self) -> str:
        return f"{self.span.label()}: {self.message}"


@dataclass
class ParseResult:
    model: mm.Model | None
    errors: list[ParseError] = field(default_factory=list)

    def ok(self) -> bool:
        return self.model is not None and not self.errors


class ParseFailure(AbmsError):
    def __init__(self, errors: list[ParseError]):
        super().__init__("; ".join(str(e) for e in errors) or "parse failed")
        self.errors = errors


class _Syntax(Exception):
    """Internal: unwound to the nearest recovery point."""

    def __init__(self, error: ParseError):
        self.error = error


class _Parser:
    def __init__(self, text: str, filename: str):
        self.tokens = tokenize(text)
        self.pos = 0
        self.file = filename
        self.errors: list[ParseError] = []
        self.depth = 0  # consumed-brace nesting, used by panic recovery

    # -- token plumbing ----------------------------------------------------

    def peek(self, offset: int = 0) -> Token:
        i = min(self.pos + offset, len(self.tokens) - 1)
        return self.tokens[i]

    def next(self) -> Token:
        tok = self.peek()
        if tok.type != "eof":
            self.pos += 1
            if tok.type == "punct":
                if tok.value == "{":
                    self.depth += 1
                elif tok.value == "}":
                    self.depth = max(0, self.depth - 1)
        return tok

    def at(self, type_: str, value: object = None) -> bool:
        tok = self.peek()
        return tok.type == type_ and (value is None or tok.value == value)

    def at_kw(self, *names: str) -> bool:
        tok = self.peek()
        return tok.type == "kw" and tok.value in names

    def accept(self, type_: str, value: object = None) -> Token | None:
        if self.at(type_, value):
            return self.next()
        return None

    def fail(self, *expected: str, message: str | None = None) -> _Syntax:
        tok = self.peek()
        if message is None:
            message = f"expected {_join(expected)}, found {tok.describe()}"
        return _Syntax(ParseError(tok.span(self.file), tuple(expected), tok.describe(), message))

    def expect(self, type_: str, value: object = None, label: str | None = None) -> Token:
        tok = self.accept(type_, value)
        if tok is None:
            raise self.fail(label or (f"'{value}'" if value is not None else type_))
        return tok

    def expect_kw(self, name: str) -> Token:
        return self.expect("kw", name)

    def expect_ident(self, label: str = "identifier") -> Token:
        tok = self.accept("ident")
        if tok is None:
            raise self.fail(label)
        return tok

    def expect_int(self, label: str = "integer") -> int:
        tok = self.accept("int")
        if tok is None:
            raise self.fail(label)
        return int(tok.value)  # type: ignore[arg-type]

    def expect_number(self, label: str = "number") -> float:
        sign = -1.0 if self.accept("punct", "-") else 1.0
        tok = self.accept("int") or self.accept("real")
        if tok is None:
            raise self.fail(label)
        return sign * float(tok.value)  # type: ignore[arg-type]

    def expect_string(self, label: str = "string") -> str:
        tok = self.accept("string")
        if tok is None:
            raise self.fail(label)
        return str(tok.value)

    def span_from(self, start: Token) -> SourceSpan:
        prev = self.tokens[max(self.pos - 1, 0)]
        end = prev if prev.type != "eof" else start
        return SourceSpan(self.file, start.line, start.col, end.end_line, end.end_col)

    def record(self, err: _Syntax) -> None:
        self.errors.append(err.error)

    def error_at(self, tok: Token, message: str) -> None:
        self.errors.append(ParseError(tok.span(self.file), (), tok.describe(), message))

    def _ensure_progress(self, before: int) -> None:
        if self.pos == before and not self.at("eof") and not self.at("punct", "}"):
            self.next()

    def sync(self, stop_keywords: frozenset, body_depth: int) -> None:
        """Skip ahead to a declaration boundary at ``body_depth`` (or leave the
        block entirely); never consumes the block's closing brace."""
        while not self.at("eof"):
            if self.depth < body_depth:
                return
            tok = self.peek()
            at_body = self.depth == body_depth
            if at_body and tok.type == "punct" and tok.value == "}":
                return
            if at_body and tok.type == "kw" and tok.value in stop_keywords:
                return
            self.next()

    # -- model -------------------------------------------------------------

    def parse_model(self) -> mm.Model | None:
        start = self.peek()
        try:
            self.expect_kw("model")
            name = self.expect_ident("model name").value
        except _Syntax as err:
            self.record(err)
            return None
        model = mm.Model(name=str(name))
        self._names: dict[str, dict[str, Token]] = {}
        try:
            self.expect("punct", "{")
        except _Syntax as err:
            self.record(err)
            return None
        body_depth = self.depth
        while not self.at("eof") and not self.at("punct", "}"):
            before = self.pos
            try:
                self.parse_item(model)
            except _Syntax as err:
                self.record(err)
                self._ensure_progress(before)
                self.sync(_ITEM_KEYWORDS, body_depth)
        try:
            self.expect("punct", "}")
        except _Syntax as err:
            self.record(err)
        trailing = self.peek()
        if trailing.type != "eof":
            self.error_at(trailing, f"unexpected {trailing.describe()} after the model block")
        if model.environment is None:
            self.errors.append(
                ParseError(self.span_from(start), ("'environment'",), "end of model", "model declares no environment")
            )
        model.span = self.span_from(start)
        return model

    def declare(self, namespace: str, tok: Token, what: str) -> bool:
        names = self._names.setdefault(namespace, {})
        if tok.value in names:
            self.error_at(tok, f"duplicate {what} name '{tok.value}'")
            return False
        names[str(tok.value)] = tok
        return True

    def parse_item(self, model: mm.Model) -> None:
        if self.at_kw("environment"):
            env = self.parse_environment()
            if model.environment is not None:
                self.errors.append(
                    ParseError(env.span or self.span_from(self.peek()), (), "environment", "duplicate environment declaration")
                )
            else:
                model.environment = env
        elif self.at_kw("agent"):
            spec = self.parse_agent()
            if self.declare("types", spec._name_token, "type"):
                model.agent_types.append(spec.value)
        elif self.at_kw("entity"):
            spec = self.parse_entity()
            if self.declare("types", spec._name_token, "type"):
                model.entity_types.append(spec.value)
        elif self.at_kw("disease"):
            spec = self.parse_disease()
            if self.declare("diseases", spec._name_token, "disease"):
                model.diseases.append(spec.value)
        elif self.at_kw("machine"):
            spec = self.parse_machine()
            if self.declare("machines", spec._name_token, "machine"):
                model.machines.append(spec.value)
        elif self.at_kw("plan"):
            spec = self.parse_plan()
            if self.declare("machines", spec._name_token, "plan"):
                model.plans.append(spec.value)
        elif self.at_kw("introduce"):
            model.introductions.append(self.parse_introduce())
        elif self.at_kw("output"):
            spec = self.parse_output()
            if self.declare("outputs", spec._name_token, "output"):
                model.outputs.append(spec.value)
        elif self.at_kw("concern"):
            spec = self.parse_concern()
            if self.declare("concerns", spec._name_token, "concern"):
                model.concerns.append(spec.value)
        else:
            raise self.fail(*(f"'{k}'" for k in sorted(_ITEM_KEYWORDS)))

    # -- environment -------------------------------------------------------

    def parse_environment(self) -> mm.EnvironmentSpec:
        start = self.expect_kw("environment")
        if self.accept("kw", "grid"):
            self.expect_kw("width")
            width = self.expect_int("grid width")
            self.expect_kw("height")
            height = self.expect_int("grid height")
            wrap = self.accept("kw", "wrap") is not None
            topo: object = mm.GridTopology(width, height, wrap, span=self.span_from(start))
        elif self.accept("kw", "cartesian"):
            x_min, x_max = self.parse_range()
            y_min, y_max = self.parse_range()
            topo = mm.CartesianTopology(x_min, x_max, y_min, y_max, span=self.span_from(start))
        elif self.accept("kw", "graph"):
            self.expect_kw("from")
            source = self.parse_strategy()
            topo = mm.GraphTopology(source, span=self.span_from(start))
        else:
            raise self.fail("'grid'", "'cartesian'", "'graph'")
        return mm.EnvironmentSpec(topology=topo, span=self.span_from(start))  # type: ignore[arg-type]

    def parse_range(self) -> tuple[float, float]:
        low = self.expect_number("range bound")
        self.expect("punct", "..")
        high = self.expect_number("range bound")
        return low, high

    # -- creational strategies ----------------------------------------------

    def parse_strategy(self) -> mm.CreationalStrategy:
        start = self.peek()
        if self.accept("kw", "fixed"):
            count = self.expect_int("count")
            if self.accept("kw", "random"):
                return mm.FixedCountStrategy(count, None, span=self.span_from(start))
            self.expect_kw("at")
            positions: list[tuple[ex.Expr, ex.Expr]] = []
            while self.at("punct", "("):
                self.next()
                x = self.parse_expr()
                self.expect("punct", ",")
                y = self.parse_expr()
                self.expect("punct", ")")
                positions.append((x, y))
            if not positions:
                raise self.fail("'('", message="expected at least one (x, y) position")
            return mm.FixedCountStrategy(count, positions, span=self.span_from(start))
        if self.accept("kw", "gis"):
            return mm.GisPointsStrategy(self.expect_string("point file path"), span=self.span_from(start))
        if self.accept("kw", "osm"):
            return mm.OsmGraphStrategy(self.expect_string("OSM file path"), span=self.span_from(start))
        if self.accept("kw", "edges"):
            return self.parse_inline_edges(start)
        raise self.fail("'fixed'", "'gis'", "'osm'", "'edges'")

    def parse_inline_edges(self, start: Token) -> mm.InlineEdgeListStrategy:
        self.expect("punct", "{")
        nodes: list[mm.InlineNode] = []
        edges: list[mm.InlineEdge] = []
        while not self.at("punct", "}") and not self.at("eof"):
            if self.accept("kw", "node"):
                nstart = self.peek()
                name = str(self.expect_ident("node name").value)
                x = self.expect_number("x coordinate")
                y = self.expect_number("y coordinate")
                nodes.append(mm.InlineNode(name, x, y, span=self.span_from(nstart)))
            elif self.accept("kw", "edge"):
                estart = self.peek()
                a = str(self.expect_ident("node name").value)
                b = str(self.expect_ident("node name").value)
                length = self.expect_number("edge length")
                edges.append(mm.InlineEdge(a, b, length, span=self.span_from(estart)))
            else:
                raise self.fail("'node'", "'edge'", "'}'")
        self.expect("punct", "}")
        return mm.InlineEdgeListStrategy(nodes, edges, span=self.span_from(start))

    # -- agents and entities -------------------------------------------------

    @dataclass
    class _Named:
        value: object
        _name_token: Token

    def parse_agent(self) -> "_Parser._Named":
        start = self.expect_kw("agent")
        name_tok = self.expect_ident("agent name")
        spec = mm.AgentTypeSpec(name=str(name_tok.value), creation=mm.FixedCountStrategy(0))
        self.expect("punct", "{")
        body_depth = self.depth
        self.expect_kw("create")
        spec.creation = self.parse_strategy()
        attr_names: set[str] = set()
        while not self.at("punct", "}") and not self.at("eof"):
            before = self.pos
            try:
                if self.at_kw("capability"):
                    spec.capabilities.append(self.parse_capability())
                elif self.at_kw("attr"):
                    self.parse_attr(spec.attributes, attr_names)
                else:
                    raise self.fail("'capability'", "'attr'", "'}'")
            except _Syntax as err:
                self.record(err)
                self._ensure_progress(before)
                self.sync(_AGENT_BODY, body_depth)
        self.expect("punct", "}")
        spec.span = self.span_from(start)
        return self._Named(spec, name_tok)

    def parse_entity(self) -> "_Parser._Named":
        start = self.expect_kw("entity")
        name_tok = self.expect_ident("entity name")
        spec = mm.EntityTypeSpec(name=str(name_tok.value), creation=mm.FixedCountStrategy(0))
        self.expect("punct", "{")
        body_depth = self.depth
        self.expect_kw("create")
        spec.creation = self.parse_strategy()
        attr_names: set[str] = set()
        while not self.at("punct", "}") and not self.at("eof"):
            before = self.pos
            try:
                if self.at_kw("attr"):
                    self.parse_attr(spec.attributes, attr_names)
                else:
                    raise self.fail("'attr'", "'}'")
            except _Syntax as err:
                self.record(err)
                self._ensure_progress(before)
                self.sync(frozenset(["attr"]), body_depth)
        self.expect("punct", "}")
        spec.span = self.span_from(start)
        return self._Named(spec, name_tok)

    def parse_attr(self, into: list[mm.AttributeSpec], seen: set[str]) -> None:
        start = self.expect_kw("attr")
        name_tok = self.expect_ident("attribute name")
        kind_tok = self.peek()
        if not self.at_kw("integer", "real", "boolean", "identifier", "text"):
            raise self.fail("'integer'", "'real'", "'boolean'", "'identifier'", "'text'")
        self.next()
        default = None
        if self.accept("punct", "="):
            default = self.parse_expr()
        if name_tok.value in seen:
            self.error_at(name_tok, f"duplicate attribute name '{name_tok.value}'")
            return
        seen.add(str(name_tok.value))
        into.append(
            mm.AttributeSpec(str(name_tok.value), str(kind_tok.value), default, span=self.span_from(start))
        )

    def parse_capability(self) -> mm.CapabilityRef:
        start = self.expect_kw("capability")
        if self.accept("kw", "mobility"):
            self.expect_kw("random_walk")
            self.expect_kw("step")
            step = self.parse_expr()
            return mm.CapabilityRef("mobility", parameters={"step": step}, span=self.span_from(start))
        if self.accept("kw", "disease"):
            target = str(self.expect_ident("disease name").value)
            return mm.CapabilityRef("disease", target=target, span=self.span_from(start))
        if self.accept("kw", "state_machine"):
            target = str(self.expect_ident("machine or plan name").value)
            return mm.CapabilityRef("state_machine", target=target, span=self.span_from(start))
        if self.accept("kw", "flow_control"):
            return self.parse_flow_control(start)
        if self.accept("kw", "qlearning"):
            return self.parse_qlearning(start)
        if self.accept("kw", "external"):
            library = self.expect_string("library path")
            entry = str(self.expect_ident("entry point").value)
            params = {"library": ex.Literal(library, ex.TEXT)}
            return mm.CapabilityRef("external", target=entry, parameters=params, span=self.span_from(start))
        if self.accept("kw", "adaptation"):
            # Reserved vocabulary: parsed so validation can reject it clearly.
            return mm.CapabilityRef("adaptation", span=self.span_from(start))
        raise self.fail(
            "'mobility'", "'disease'", "'state_machine'", "'flow_control'", "'qlearning'", "'external'"
        )

    def parse_flow_control(self, start: Token) -> mm.CapabilityRef:
        if self.accept("kw", "streams"):
            self.expect_kw("auto")
            return mm.CapabilityRef("flow_control", streams=None, span=self.span_from(start))
        streams: list[tf.StreamSpec] = []
        while self.at_kw("stream"):
            sstart = self.next()
            sid = str(self.expect_ident("stream id").value)
            self.expect_kw("edge")
            a = str(self.expect_ident("node name").value)
            b = str(self.expect_ident("node name").value)
            capacity = None
            if self.accept("kw", "capacity"):
                capacity = self.expect_int("capacity")
            streams.append(tf.StreamSpec(sid, (a, b), capacity, span=self.span_from(sstart)))
        if not streams:
            raise self.fail("'streams'", "'stream'")
        return mm.CapabilityRef("flow_control", streams=streams, span=self.span_from(start))

    def parse_qlearning(self, start: Token) -> mm.CapabilityRef:
        alpha = gamma = epsilon = None
        plans: list[str] | None = None
        bins: list[int] = []
        reward: ex.Expr | None = None
        while self.at_kw("alpha", "gamma", "epsilon", "plans", "bins", "reward"):
            key = str(self.next().value)
            if key == "alpha":
                alpha = self.expect_number("alpha")
            elif key == "gamma":
                gamma = self.expect_number("gamma")
            elif key == "epsilon":
                epsilon = self.expect_number("epsilon")
            elif key == "plans":
                plans = self.parse_ident_list("plan name")
            elif key == "bins":
                bins = []
                while self.at("int"):
                    bins.append(self.expect_int())
            else:
                reward = self.parse_expr()
        missing = [
            label
            for label, value in (("alpha", alpha), ("gamma", gamma), ("epsilon", epsilon), ("plans", plans))
            if value is None
        ]
        if missing:
            raise self.fail(
                *(f"'{m}'" for m in missing),
                message=f"qlearning is missing {_join(tuple(missing))}",
            )
        spec = tf.QLearningSpec(
            alpha=float(alpha),  # type: ignore[arg-type]
            gamma=float(gamma),  # type: ignore[arg-type]
            epsilon=float(epsilon),  # type: ignore[arg-type]
            plans=list(plans or []),
            bins=bins,
            reward=reward,
            span=self.span_from(start),
        )
        return mm.CapabilityRef("reinforcement_learning", qlearning=spec, span=self.span_from(start))

    def parse_ident_list(self, label: str) -> list[str]:
        names = [str(self.expect_ident(label).value)]
        while self.at("ident"):
            names.append(str(self.next().value))
        return names

    # -- diseases ------------------------------------------------------------

    def parse_disease(self) -> "_Parser._Named":
        start = self.expect_kw("disease")
        name_tok = self.expect_ident("disease name")
        self.expect_kw("model")
        if self.at("ident") and self.peek().value in (dz.SIR, dz.SEIR, dz.PSIR):
            kind = str(self.next().value)
        elif self.accept("kw", "custom"):
            kind = dz.CUSTOM
        else:
            raise self.fail("'SIR'", "'SEIR'", "'PSIR'", "'custom'")
        spec = dz.DiseaseModelSpec(name=str(name_tok.value), kind=kind, transmission=None)
        self.expect("punct", "{")
        body_depth = self.depth
        duration_seen: set[str] = set()
        while not self.at("punct", "}") and not self.at("eof"):
            before = self.pos
            try:
                self.parse_disease_clause(spec, duration_seen)
            except _Syntax as err:
                self.record(err)
                self._ensure_progress(before)
                self.sync(_DISEASE_BODY, body_depth)
        self.expect("punct", "}")
        spec.span = self.span_from(start)
        return self._Named(spec, name_tok)

    def parse_disease_clause(self, spec: dz.DiseaseModelSpec, duration_seen: set[str]) -> None:
        if self.at_kw("transmission"):
            tstart = self.next()
            if spec.transmission is not None:
                self.error_at(tstart, "duplicate transmission clause")
            spec.transmission = self.parse_transmission(tstart)
        elif self.at_kw("duration"):
            dstart = self.next()
            comp_tok = self.expect_ident("compartment")
            trigger = self.parse_trigger()
            if comp_tok.value in duration_seen:
                self.error_at(comp_tok, f"duplicate duration for compartment '{comp_tok.value}'")
                return
            duration_seen.add(str(comp_tok.value))
            spec.progressions.append(
                dz.ProgressionSpec(str(comp_tok.value), trigger, span=self.span_from(dstart))
            )
        elif self.at_kw("passive"):
            pstart = self.next()
            self.expect_kw("duration")
            if spec.passive_immunity is not None:
                self.error_at(pstart, "duplicate passive immunity duration")
            spec.passive_immunity = self.parse_trigger()
        elif self.at_kw("immunity"):
            istart = self.next()
            self.expect_kw("duration")
            if spec.recovered_immunity is not None:
                self.error_at(istart, "duplicate immunity duration")
            spec.recovered_immunity = self.parse_trigger()
        elif self.at_kw("mortality"):
            mstart = self.next()
            comp = str(self.expect_ident("compartment").value)
            self.expect_kw("rate")
            rate = self.parse_expr()
            rule = dz.MortalitySpec(comp, rate, dz.EVERY_TIMEUNIT)
            if self.accept("kw", "every_timeunit"):
                rule.evaluation = dz.EVERY_TIMEUNIT
            elif self.accept("kw", "specific_timeunit"):
                rule.evaluation = dz.SPECIFIC_TIMEUNIT
                rule.at_tick = self.expect_int("tick")
            elif self.accept("kw", "when_condition"):
                rule.evaluation = dz.WHEN_CONDITION
                rule.condition = self.parse_expr()
            elif self.accept("kw", "leaving_compartment"):
                rule.evaluation = dz.LEAVING_COMPARTMENT
            else:
                raise self.fail(
                    "'every_timeunit'", "'specific_timeunit'", "'when_condition'", "'leaving_compartment'"
                )
            rule.span = self.span_from(mstart)
            spec.mortality.append(rule)
        elif self.at_kw("states"):
            self.next()
            spec.custom_states = self.parse_ident_list("compartment")
        elif self.at_kw("initial"):
            self.next()
            spec.custom_initial = str(self.expect_ident("compartment").value)
        elif self.at_kw("transition"):
            tstart = self.next()
            a = str(self.expect_ident("compartment").value)
            b = str(self.expect_ident("compartment").value)
            trigger = self.parse_trigger()
            spec.custom_transitions.append(dz.CustomTransitionSpec(a, b, trigger, span=self.span_from(tstart)))
        else:
            raise self.fail(*(f"'{k}'" for k in sorted(_DISEASE_BODY)), "'}'")

    def parse_transmission(self, start: Token) -> dz.TransmissionSpec:
        if self.accept("kw", "proximity"):
            interaction = dz.PROXIMITY
            distance: ex.Expr | None = self.parse_expr()
        elif self.accept("kw", "contact"):
            interaction = dz.CONTACT
            distance = None
        else:
            raise self.fail("'proximity'", "'contact'")
        self.expect_kw("probability")
        probability = self.parse_expr()
        spec = dz.TransmissionSpec(interaction, distance, probability)
        while self.at_kw("to", "infectious", "condition", "sources"):
            key = str(self.next().value)
            if key == "to":
                spec.target = str(self.expect_ident("compartment").value)
            elif key == "infectious":
                spec.infectious = self.parse_ident_list("compartment")
            elif key == "condition":
                spec.condition = self.parse_expr()
            else:
                spec.sources = self.parse_ident_list("entity type")
        spec.span = self.span_from(start)
        return spec

    # -- triggers ------------------------------------------------------------

    def parse_trigger(self) -> sm.Trigger:
        start = self.peek()
        if self.accept("kw", "probabilistic"):
            self.expect_kw("rate")
            return sm.ProbabilisticTrigger(self.parse_expr(), span=self.span_from(start))
        if self.accept("kw", "deterministic"):
            return sm.DeterministicTrigger(self.parse_expr(), span=self.span_from(start))
        if self.accept("kw", "conditional"):
            return sm.ConditionalTrigger(self.parse_expr(), span=self.span_from(start))
        if self.accept("kw", "custom"):
            if self.accept("kw", "all_of"):
                mode = "all_of"
            elif self.accept("kw", "any_of"):
                mode = "any_of"
            else:
                raise self.fail("'all_of'", "'any_of'")
            self.expect("punct", "(")
            parts = [self.parse_trigger()]
            while self.accept("punct", ","):
                parts.append(self.parse_trigger())
            self.expect("punct", ")")
            return sm.CompositeTrigger(mode, parts, span=self.span_from(start))
        raise self.fail("'probabilistic'", "'deterministic'", "'conditional'", "'custom'")

    # -- machines and plans ----------------------------------------------------

    def parse_machine(self) -> "_Parser._Named":
        start = self.expect_kw("machine")
        name_tok = self.expect_ident("machine name")
        self.expect("punct", "{")
        body_depth = self.depth
        self.expect_kw("initial")
        initial = str(self.expect_ident("state name").value)
        states: list[str] = []
        transitions: list[sm.Transition] = []
        while not self.at("punct", "}") and not self.at("eof"):
            before = self.pos
            try:
                if self.accept("kw", "state"):
                    state_tok = self.expect_ident("state name")
                    if state_tok.value in states:
                        self.error_at(state_tok, f"duplicate state name '{state_tok.value}'")
                    else:
                        states.append(str(state_tok.value))
                elif self.at_kw("transition"):
                    tstart = self.next()
                    a = str(self.expect_ident("state name").value)
                    b = str(self.expect_ident("state name").value)
                    trigger = self.parse_trigger()
                    guard = None
                    abortion = None
                    if self.accept("kw", "guard"):
                        guard = self.parse_expr()
                    if self.accept("kw", "abort"):
                        prob = self.parse_expr()
                        self.expect_kw("to")
                        abort_to = str(self.expect_ident("state name").value)
                        abortion = sm.Abortion(prob, abort_to)
                    transitions.append(
                        sm.Transition(a, b, trigger, guard, abortion, span=self.span_from(tstart))
                    )
                else:
                    raise self.fail("'state'", "'transition'", "'}'")
            except _Syntax as err:
                self.record(err)
                self._ensure_progress(before)
                self.sync(_MACHINE_BODY, body_depth)
        self.expect("punct", "}")
        spec = sm.StateMachineSpec(str(name_tok.value), states, initial, transitions, span=self.span_from(start))
        return self._Named(spec, name_tok)

    def parse_plan(self) -> "_Parser._Named":
        start = self.expect_kw("plan")
        name_tok = self.expect_ident("plan name")
        self.expect("punct", "{")
        body_depth = self.depth
        phases: list[tf.PhaseSpec] = []
        phase_names: set[str] = set()
        while not self.at("punct", "}") and not self.at("eof"):
            before = self.pos
            try:
                pstart = self.expect_kw("phase")
                phase_tok = self.expect_ident("phase name")
                self.expect_kw("green")
                green = self.parse_ident_list("stream id")
                self.expect_kw("duration")
                duration = self.expect_int("duration")
                if phase_tok.value in phase_names:
                    self.error_at(phase_tok, f"duplicate phase name '{phase_tok.value}'")
                    continue
                phase_names.add(str(phase_tok.value))
                phases.append(tf.PhaseSpec(str(phase_tok.value), green, duration, span=self.span_from(pstart)))
            except _Syntax as err:
                self.record(err)
                self._ensure_progress(before)
                self.sync(frozenset(["phase"]), body_depth)
        self.expect("punct", "}")
        spec = tf.PlanSpec(str(name_tok.value), phases, span=self.span_from(start))
        return self._Named(spec, name_tok)

    # -- introductions, outputs, concerns ---------------------------------------

    def parse_introduce(self) -> dz.DiseaseIntroductionSpec:
        start = self.expect_kw("introduce")
        disease = str(self.expect_ident("disease name").value)
        spec = dz.DiseaseIntroductionSpec(disease=disease, quantity_kind="deterministic")
        if self.accept("kw", "deterministic"):
            spec.quantity_kind = "deterministic"
            spec.count = self.expect_int("count")
        elif self.accept("kw", "probabilistic"):
            spec.quantity_kind = "probabilistic"
            spec.probability = self.expect_number("probability")
        else:
            raise self.fail("'deterministic'", "'probabilistic'")
        if self.accept("kw", "arbitrary"):
            spec.selection = "arbitrary"
        elif self.accept("kw", "eligible"):
            spec.selection = "eligible"
            spec.eligibility = self.parse_expr()
        else:
            raise self.fail("'arbitrary'", "'eligible'")
        if self.accept("kw", "aperiodic"):
            spec.periodicity = "aperiodic"
        elif self.accept("kw", "periodic"):
            spec.periodicity = "periodic"
            spec.interval = self.expect_int("interval")
        else:
            raise self.fail("'aperiodic'", "'periodic'")
        spec.span = self.span_from(start)
        return spec

    def parse_output(self) -> "_Parser._Named":
        start = self.expect_kw("output")
        name_tok = self.expect_ident("output name")
        self.expect_kw("every")
        interval = self.expect_int("interval")
        self.expect_kw("to")
        path = self.expect_string("output path")
        self.expect("punct", "{")
        body_depth = self.depth
        series: list[mm.SeriesSpec] = []
        labels: set[str] = set()
        while not self.at("punct", "}") and not self.at("eof"):
            before = self.pos
            try:
                sstart = self.expect_kw("series")
                label_tok = self.expect_ident("series label")
                value = self.parse_expr()
                if label_tok.value in labels:
                    self.error_at(label_tok, f"duplicate series label '{label_tok.value}'")
                    continue
                labels.add(str(label_tok.value))
                series.append(mm.SeriesSpec(str(label_tok.value), value, span=self.span_from(sstart)))
            except _Syntax as err:
                self.record(err)
                self._ensure_progress(before)
                self.sync(frozenset(["series"]), body_depth)
        self.expect("punct", "}")
        spec = mm.OutputDatasetSpec(str(name_tok.value), interval, path, series, span=self.span_from(start))
        return self._Named(spec, name_tok)

    def parse_concern(self) -> "_Parser._Named":
        start = self.expect_kw("concern")
        name_tok = self.expect_ident("concern name")
        self.expect("punct", "{")
        members: list[str] = []
        if self.accept("kw", "members"):
            members = self.parse_ident_list("member name")
        self.expect("punct", "}")
        spec = mm.ConcernSpec(str(name_tok.value), members, span=self.span_from(start))
        return self._Named(spec, name_tok)

    # -- expressions -------------------------------------------------------------

    def parse_expr(self) -> ex.Expr:
        return self.parse_or()

    def parse_or(self) -> ex.Expr:
        left = self.parse_and()
        while self.at_kw("or"):
            tok = self.next()
            right = self.parse_and()
            left = ex.Binary("or", left, right, span=self._espan(left, right, tok))
        return left

    def parse_and(self) -> ex.Expr:
        left = self.parse_not()
        while self.at_kw("and"):
            tok = self.next()
            right = self.parse_not()
            left = ex.Binary("and", left, right, span=self._espan(left, right, tok))
        return left

    def parse_not(self) -> ex.Expr:
        if self.at_kw("not"):
            tok = self.next()
            operand = self.parse_not()
            return ex.Unary("not", operand, span=self._espan(operand, operand, tok))
        return self.parse_comparison()

    def parse_comparison(self) -> ex.Expr:
        left = self.parse_additive()
        if self.at_kw("is"):
            tok = self.next()
            state = str(self.expect_ident("state name").value)
            if not (isinstance(left, ex.AttrRef) and left.owner is None):
                raise _Syntax(
                    ParseError(
                        tok.span(self.file),
                        (),
                        tok.describe(),
                        "the left side of 'is' must name a disease or state machine",
                    )
                )
            return ex.StateTest(left.name, state, span=self._espan(left, left, tok))
        if self.at("punct") and self.peek().value in _COMPARE_OPS:
            op = str(self.next().value)
            right = self.parse_additive()
            return ex.Binary(op, left, right, span=self._espan(left, right))
        return left

    def parse_additive(self) -> ex.Expr:
        left = self.parse_multiplicative()
        while self.at("punct") and self.peek().value in ("+", "-"):
            op = str(self.next().value)
            right = self.parse_multiplicative()
            left = ex.Binary(op, left, right, span=self._espan(left, right))
        return left

    def parse_multiplicative(self) -> ex.Expr:
        left = self.parse_unary()
        while self.at("punct") and self.peek().value in ("*", "/"):
            op = str(self.next().value)
            right = self.parse_unary()
            left = ex.Binary(op, left, right, span=self._espan(left, right))
        return left

    def parse_unary(self) -> ex.Expr:
        if self.at("punct", "-"):
            tok = self.next()
            operand = self.parse_unary()
            return ex.Unary("-", operand, span=self._espan(operand, operand, tok))
        return self.parse_primary()

    def parse_primary(self) -> ex.Expr:
        tok = self.peek()
        if tok.type == "int":
            self.next()
            return ex.Literal(int(tok.value), ex.INTEGER, span=tok.span(self.file))  # type: ignore[arg-type]
        if tok.type == "real":
            self.next()
            return ex.Literal(float(tok.value), ex.REAL, span=tok.span(self.file))  # type: ignore[arg-type]
        if tok.type == "string":
            self.next()
            return ex.Literal(str(tok.value), ex.TEXT, span=tok.span(self.file))
        if self.at_kw("true") or self.at_kw("false"):
            self.next()
            return ex.Literal(tok.value == "true", ex.BOOLEAN, span=tok.span(self.file))
        if self.at_kw("count") or self.at_kw("sum"):
            return self.parse_aggregate()
        if self.accept("punct", "("):
            inner = self.parse_expr()
            self.expect("punct", ")")
            return inner
        if tok.type == "ident":
            self.next()
            if self.accept("punct", "."):
                attr = self.expect_ident("attribute name")
                return ex.AttrRef(str(tok.value), str(attr.value), span=tok.span(self.file))
            return ex.AttrRef(None, str(tok.value), span=tok.span(self.file))
        raise self.fail("expression")

    def parse_aggregate(self) -> ex.Expr:
        tok = self.next()  # count | sum
        func = str(tok.value)
        self.expect("punct", "(")
        population = str(self.expect_ident("population type").value)
        predicate = None
        if self.accept("kw", "where"):
            predicate = self.parse_expr()
        value = None
        if func == "sum":
            self.expect("punct", ",")
            value = self.parse_expr()
        self.expect("punct", ")")
        return ex.Aggregate(func, population, predicate, value, span=tok.span(self.file))

    def _espan(self, left: ex.Expr, right: ex.Expr, tok: Token | None = None) -> SourceSpan | None:
        spans = [s for s in (getattr(left, "span", None), getattr(right, "span", None)) if s is not None]
        if tok is not None:
            spans.append(tok.span(self.file))
        if not spans:
            return None
        merged = spans[0]
        for s in spans[1:]:
            merged = merged.merge(s)
        return merged


def _join(expected: tuple[str, ...]) -> str:
    if not expected:
        return "something else"
    if len(expected) == 1:
        return expected[0]
    return ", ".join(expected[:-1]) + " or " + expected[-1]


def parse(text: str, filename: str = "<input>") -> ParseResult:
    """Parse source text.  ``model`` is set only when there were no errors."""
    parser = _Parser(text, filename)
    model = parser.parse_model()
    if parser.errors:
        return ParseResult(None, parser.errors)
    return ParseResult(model, [])


def parse_model(text: str, filename: str = "<input>") -> mm.Model:
    """Parse and return the model, raising :class:`ParseFailure` on any error."""
    result = parse(text, filename)
    if result.model is None:
        raise ParseFailure(result.errors)
    return result.model

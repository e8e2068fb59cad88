"""Semantic model of a simulation and whole-model validation.

The model is plain data: agent and entity types with attributes and creational
strategies, one environment, capability specifications (state machines,
plans, diseases), introduction rules, outputs, and concerns.  Capability
specializations are variant payloads rather than inheritance so that every
reference is explicit and checkable.

:func:`validate` turns every structural invariant into an ordered, repeatable
list of diagnostics; a model with an empty report is safe to hand to the
engine or the code generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import disease as dz
from . import expr as ex
from . import statemachine as sm
from . import traffic as tf
from .errors import AbmsError, ExprTypeError
from .source import SourceSpan

CAPABILITY_KINDS = (
    "mobility",
    "state_machine",
    "flow_control",
    "reinforcement_learning",
    "disease",
    "external",
)

ATTRIBUTE_KINDS = ex.KINDS


@dataclass
class AttributeSpec:
    name: str
    kind: str
    default: ex.Expr | None = None
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class GridTopology:
    width: int
    height: int
    wrap: bool = False
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class CartesianTopology:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class GraphTopology:
    source: "CreationalStrategy"
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class EnvironmentSpec:
    topology: "GridTopology | CartesianTopology | GraphTopology"
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class FixedCountStrategy:
    """Create ``count`` instances, placed randomly or at the given positions
    (cycled when there are more instances than positions)."""

    count: int
    placement: list[tuple[ex.Expr, ex.Expr]] | None = None  # None = random
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class GisPointsStrategy:
    """One instance per line of a point file (``x,y[,attr=value...]``)."""

    path: str
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class OsmGraphStrategy:
    """As an environment source: build the road graph from the file.  As an
    agent strategy: one controller per intersection node (degree >= 3)."""

    path: str
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class InlineNode:
    name: str
    x: float = 0.0
    y: float = 0.0
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class InlineEdge:
    source: str
    target: str
    length: float
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class InlineEdgeListStrategy:
    nodes: list[InlineNode] = field(default_factory=list)
    edges: list[InlineEdge] = field(default_factory=list)
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


CreationalStrategy = (
    FixedCountStrategy | GisPointsStrategy | OsmGraphStrategy | InlineEdgeListStrategy
)


@dataclass
class CapabilityRef:
    """One capability attached to an agent type.

    ``parameters`` holds scalar parameters (mobility step, external library
    and entry point); structured payloads ride along: stream declarations for
    flow control and the learning configuration for reinforcement learning.
    """

    kind: str
    target: str | None = None
    parameters: dict[str, ex.Expr] = field(default_factory=dict)
    streams: list[tf.StreamSpec] | None = None  # flow_control; None = auto
    qlearning: tf.QLearningSpec | None = None
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class EntityTypeSpec:
    name: str
    creation: CreationalStrategy
    attributes: list[AttributeSpec] = field(default_factory=list)
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class AgentTypeSpec:
    name: str
    creation: CreationalStrategy
    attributes: list[AttributeSpec] = field(default_factory=list)
    capabilities: list[CapabilityRef] = field(default_factory=list)
    span: SourceSpan | None = field(default=None, compare=False, repr=False)

    def capability(self, kind: str) -> CapabilityRef | None:
        for cap in self.capabilities:
            if cap.kind == kind:
                return cap
        return None

    def disease_names(self) -> list[str]:
        return [c.target for c in self.capabilities if c.kind == "disease" and c.target]


@dataclass
class SeriesSpec:
    label: str
    value: ex.Expr
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class OutputDatasetSpec:
    name: str
    interval: int
    path: str
    series: list[SeriesSpec] = field(default_factory=list)
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class ConcernSpec:
    name: str
    members: list[str] = field(default_factory=list)
    span: SourceSpan | None = field(default=None, compare=False, repr=False)


@dataclass
class Model:
    name: str
    environment: EnvironmentSpec | None = None
    agent_types: list[AgentTypeSpec] = field(default_factory=list)
    entity_types: list[EntityTypeSpec] = field(default_factory=list)
    machines: list[sm.StateMachineSpec] = field(default_factory=list)
    plans: list[tf.PlanSpec] = field(default_factory=list)
    diseases: list[dz.DiseaseModelSpec] = field(default_factory=list)
    introductions: list[dz.DiseaseIntroductionSpec] = field(default_factory=list)
    outputs: list[OutputDatasetSpec] = field(default_factory=list)
    concerns: list[ConcernSpec] = field(default_factory=list)
    span: SourceSpan | None = field(default=None, compare=False, repr=False)

    def agent_type(self, name: str) -> AgentTypeSpec | None:
        return next((a for a in self.agent_types if a.name == name), None)

    def entity_type(self, name: str) -> EntityTypeSpec | None:
        return next((e for e in self.entity_types if e.name == name), None)

    def disease(self, name: str) -> dz.DiseaseModelSpec | None:
        return next((d for d in self.diseases if d.name == name), None)

    def machine(self, name: str) -> sm.StateMachineSpec | None:
        return next((m for m in self.machines if m.name == name), None)

    def plan(self, name: str) -> tf.PlanSpec | None:
        return next((p for p in self.plans if p.name == name), None)

    def carriers(self, disease_name: str) -> list[AgentTypeSpec]:
        """Agent types that attach the named disease."""
        return [a for a in self.agent_types if disease_name in a.disease_names()]

    def graph_topology(self) -> GraphTopology | None:
        if self.environment is not None and isinstance(self.environment.topology, GraphTopology):
            return self.environment.topology
        return None


# ---------------------------------------------------------------------------
# Diagnostics


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.severity}: {self.path}: {self.message}"


@dataclass
class ValidationReport:
    diagnostics: list[Diagnostic] = field(default_factory=list)

    def errors(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.severity == "error"]

    def ok(self) -> bool:
        return not self.errors()

    def __iter__(self):
        return iter(self.diagnostics)

    def __len__(self) -> int:
        return len(self.diagnostics)


class _Collector:
    def __init__(self) -> None:
        self.seen: set[Diagnostic] = set()

    def __call__(self, severity: str, path: str, message: str) -> None:
        self.seen.add(Diagnostic(severity, path, message))

    def report(self) -> ValidationReport:
        ordered = sorted(self.seen, key=lambda d: (d.path, d.severity, d.message))
        return ValidationReport(ordered)


# ---------------------------------------------------------------------------
# Type environments


def _machine_scope(model: Model, agent: AgentTypeSpec) -> dict[str, frozenset]:
    """State-test targets visible on an agent type: its diseases and machines."""
    scope: dict[str, frozenset] = {}
    for cap in agent.capabilities:
        if cap.kind == "disease" and cap.target:
            spec = model.disease(cap.target)
            if spec is not None:
                states = set(dz.compartments_of(spec)) | {sm.DEAD_STATE}
                scope[cap.target] = frozenset(states)
        elif cap.kind == "state_machine" and cap.target:
            mspec = model.machine(cap.target)
            if mspec is not None:
                scope[cap.target] = frozenset(mspec.states)
            else:
                pspec = model.plan(cap.target)
                if pspec is not None:
                    scope[cap.target] = frozenset(ph.name for ph in pspec.phases)
    return scope


def type_environments(model: Model) -> dict[str | None, ex.TypeEnv]:
    """TypeEnv per agent/entity type plus the world env under key None.

    Population maps are shared so aggregates may nest; callers narrow
    ``allow_aggregates``/builtins per evaluation site via :func:`site_env`.
    """
    envs: dict[str | None, ex.TypeEnv] = {}
    populations: dict[str, ex.TypeEnv] = {}
    for agent in model.agent_types:
        builtins = {"tick": ex.INTEGER}
        if agent.capability("flow_control") is not None:
            builtins["stopped"] = ex.INTEGER
        env = ex.TypeEnv(
            attributes={a.name: a.kind for a in agent.attributes},
            owner=agent.name,
            machines=_machine_scope(model, agent),
            populations=populations,
            builtins=builtins,
        )
        envs[agent.name] = env
        populations[agent.name] = env
    for entity in model.entity_types:
        env = ex.TypeEnv(
            attributes={a.name: a.kind for a in entity.attributes},
            owner=entity.name,
            populations=populations,
            builtins={"tick": ex.INTEGER},
        )
        envs[entity.name] = env
        populations[entity.name] = env
    envs[None] = ex.TypeEnv(populations=populations, builtins={"tick": ex.INTEGER})
    return envs


def site_env(base: ex.TypeEnv, allow_aggregates: bool) -> ex.TypeEnv:
    return ex.TypeEnv(
        attributes=base.attributes,
        owner=base.owner,
        machines=base.machines,
        populations=base.populations,
        builtins=base.builtins,
        allow_aggregates=allow_aggregates,
    )


# ---------------------------------------------------------------------------
# Validation


def validate(model: Model) -> ValidationReport:
    """Check every model invariant; empty report means the model is sound.

    Diagnostics are data, not failures: the same model always yields the same
    report, ordered by element path.
    """
    add = _Collector()
    _check_names(model, add)
    _check_environment(model, add)
    envs = type_environments(model)
    for entity in model.entity_types:
        _check_entity(model, entity, envs, add)
    for agent in model.agent_types:
        _check_agent(model, agent, envs, add)
    for machine in model.machines:
        _check_machine(model, machine, envs, add)
    for plan in model.plans:
        tf.validate_plan(plan, add, f"plan:{plan.name}")
    for spec in model.diseases:
        _check_disease(model, spec, envs, add)
    for i, intro in enumerate(model.introductions):
        _check_introduction(model, intro, envs, add, f"introduce[{i}]")
    for output in model.outputs:
        _check_output(model, output, envs, add)
    for concern in model.concerns:
        _check_concern(model, concern, add)
    return add.report()


def _check_names(model: Model, add: _Collector) -> None:
    def unique(pairs: list[tuple[str, str]], what: str) -> None:
        seen: set[str] = set()
        for name, path in pairs:
            if name in seen:
                add("error", path, f"duplicate {what} name '{name}'")
            seen.add(name)

    unique(
        [(a.name, f"agent:{a.name}") for a in model.agent_types]
        + [(e.name, f"entity:{e.name}") for e in model.entity_types],
        "type",
    )
    unique([(d.name, f"disease:{d.name}") for d in model.diseases], "disease")
    unique(
        [(m.name, f"machine:{m.name}") for m in model.machines]
        + [(p.name, f"plan:{p.name}") for p in model.plans],
        "machine",
    )
    unique([(o.name, f"output:{o.name}") for o in model.outputs], "output")
    unique([(c.name, f"concern:{c.name}") for c in model.concerns], "concern")


def _check_environment(model: Model, add: _Collector) -> None:
    if model.environment is None:
        add("error", "environment", "model declares no environment")
        return
    topo = model.environment.topology
    if isinstance(topo, GridTopology):
        if topo.width < 1 or topo.height < 1:
            add("error", "environment", "grid dimensions must be at least 1x1")
    elif isinstance(topo, CartesianTopology):
        if topo.x_min >= topo.x_max or topo.y_min >= topo.y_max:
            add("error", "environment", "cartesian bounds require min < max on both axes")
    elif isinstance(topo, GraphTopology):
        if not isinstance(topo.source, (OsmGraphStrategy, InlineEdgeListStrategy)):
            add("error", "environment", "graph environments require an OSM or inline edge list source")
        else:
            _check_strategy_common(topo.source, add, "environment")
        if isinstance(topo.source, InlineEdgeListStrategy):
            for e in topo.source.edges:
                if e.length <= 0:
                    add("error", "environment", f"edge {e.source}-{e.target} must have positive length")
            for n in topo.source.nodes:
                if sum(1 for m in topo.source.nodes if m.name == n.name) > 1:
                    add("error", "environment", f"duplicate node '{n.name}'")
    else:
        add("error", "environment", f"unknown topology {type(topo).__name__}")


def _check_strategy_common(strategy: CreationalStrategy, add: _Collector, path: str) -> None:
    if isinstance(strategy, (GisPointsStrategy, OsmGraphStrategy)) and not strategy.path:
        add("error", path, "file path must not be empty")
    if isinstance(strategy, FixedCountStrategy) and strategy.count < 0:
        add("error", path, "creation count must be non-negative")


def _check_creation(model: Model, strategy: CreationalStrategy, envs, add: _Collector, path: str, *, agent: bool) -> None:
    _check_strategy_common(strategy, add, path)
    if isinstance(strategy, InlineEdgeListStrategy):
        add("error", path, "inline edge lists describe environments, not populations")
    if isinstance(strategy, OsmGraphStrategy):
        if not agent:
            add("error", path, "OSM-based creation applies to agent types only")
        else:
            graph = model.graph_topology()
            if graph is None or not isinstance(graph.source, OsmGraphStrategy):
                add("error", path, "OSM-based creation requires a graph environment loaded from OSM")
            elif graph.source.path != strategy.path:
                add("error", path, "OSM-based creation must reference the environment's OSM file")
    if isinstance(strategy, FixedCountStrategy) and strategy.placement is not None:
        if model.graph_topology() is not None:
            add("error", path, "explicit positions require a grid or cartesian environment")
        env = site_env(envs[None], allow_aggregates=False)
        for j, (x_expr, y_expr) in enumerate(strategy.placement):
            for coord in (x_expr, y_expr):
                try:
                    kind = ex.infer_type(coord, env)
                    if kind not in ex.NUMERIC:
                        add("error", path, f"position {j} must be numeric")
                except ExprTypeError as err:
                    add("error", path, f"position {j}: {err.message}")


def _default_env(attributes: list[AttributeSpec], upto: int, owner: str, machines) -> ex.TypeEnv:
    return ex.TypeEnv(
        attributes={a.name: a.kind for a in attributes[:upto]},
        owner=owner,
        machines=machines,
        populations={},
        builtins={"tick": ex.INTEGER},
        allow_aggregates=False,
    )


def _check_attributes(owner_path: str, owner_name: str, attributes: list[AttributeSpec], machines, add: _Collector) -> None:
    seen: set[str] = set()
    for i, attr in enumerate(attributes):
        path = f"{owner_path}.attr:{attr.name}"
        if attr.name in seen:
            add("error", path, f"duplicate attribute name '{attr.name}'")
        seen.add(attr.name)
        if attr.kind not in ATTRIBUTE_KINDS:
            add("error", path, f"unknown attribute kind '{attr.kind}'")
            continue
        if attr.default is not None:
            env = _default_env(attributes, i, owner_name, machines)
            try:
                kind = ex.infer_type(attr.default, env)
                if not ex.assignable(kind, attr.kind):
                    add("error", path, f"default of kind {kind} cannot initialize a {attr.kind} attribute")
            except ExprTypeError as err:
                add("error", path, f"default: {err.message}")


def _check_expr(expr_: ex.Expr, env: ex.TypeEnv, expected: tuple[str, ...] | None, add: _Collector, path: str, what: str) -> None:
    try:
        kind = ex.infer_type(expr_, env)
        if expected is not None and kind not in expected:
            add("error", path, f"{what} must be {' or '.join(expected)}, got {kind}")
    except ExprTypeError as err:
        add("error", path, f"{what}: {err.message}")


def _check_entity(model: Model, entity: EntityTypeSpec, envs, add: _Collector) -> None:
    path = f"entity:{entity.name}"
    _check_attributes(path, entity.name, entity.attributes, {}, add)
    _check_creation(model, entity.creation, envs, add, path, agent=False)


def _check_agent(model: Model, agent: AgentTypeSpec, envs, add: _Collector) -> None:
    path = f"agent:{agent.name}"
    machines = _machine_scope(model, agent)
    _check_attributes(path, agent.name, agent.attributes, machines, add)
    _check_creation(model, agent.creation, envs, add, path, agent=True)
    env = envs[agent.name]
    counts: dict[str, int] = {}
    disease_targets: set[str] = set()
    stream_ids: list[str] | None = None
    has_graph = model.graph_topology() is not None
    for i, cap in enumerate(agent.capabilities):
        cpath = f"{path}.capability[{i}]"
        counts[cap.kind] = counts.get(cap.kind, 0) + 1
        if cap.kind == "adaptation":
            add("error", cpath, "the adaptation capability is reserved and not supported")
            continue
        if cap.kind not in CAPABILITY_KINDS:
            add("error", cpath, f"unknown capability kind '{cap.kind}'")
            continue
        if cap.kind == "mobility":
            step = cap.parameters.get("step")
            if step is None:
                add("error", cpath, "mobility requires a step parameter")
            else:
                _check_expr(step, site_env(env, False), ex.NUMERIC, add, cpath, "mobility step")
                value = ex.literal_number(step)
                if value is not None and value < 0:
                    add("error", cpath, "mobility step must not be negative")
        elif cap.kind == "disease":
            if not cap.target or model.disease(cap.target) is None:
                add("error", cpath, f"unknown disease '{cap.target}'")
            elif cap.target in disease_targets:
                add("error", cpath, f"disease '{cap.target}' attached more than once")
            else:
                disease_targets.add(cap.target)
        elif cap.kind == "state_machine":
            if not cap.target:
                add("error", cpath, "state_machine requires a target")
            elif model.machine(cap.target) is None and model.plan(cap.target) is None:
                add("error", cpath, f"unknown state machine or plan '{cap.target}'")
            elif model.plan(cap.target) is not None and agent.capability("flow_control") is None:
                add("error", cpath, "running a signal plan requires the flow_control capability")
        elif cap.kind == "flow_control":
            if not has_graph:
                add("error", cpath, "flow control requires graph topology")
            stream_ids = _check_streams(model, cap, add, cpath)
        elif cap.kind == "reinforcement_learning":
            if cap.qlearning is None:
                add("error", cpath, "learning capability is missing its configuration")
            else:
                tf.validate_qlearning(cap.qlearning, add, cpath)
                for plan_name in cap.qlearning.plans:
                    if model.plan(plan_name) is None:
                        add("error", cpath, f"unknown plan '{plan_name}'")
                if cap.qlearning.reward is not None:
                    _check_expr(cap.qlearning.reward, site_env(env, True), ex.NUMERIC, add, cpath, "reward")
            if agent.capability("flow_control") is None:
                add("error", cpath, "learning requires the flow_control capability")
        elif cap.kind == "external":
            library = cap.parameters.get("library")
            if library is None or not (isinstance(library, ex.Literal) and library.value):
                add("error", cpath, "external capability requires a library path")
            if not cap.target:
                add("error", cpath, "external capability requires an entry point name")
    if counts.get("mobility", 0) > 1:
        add("error", path, "at most one mobility capability per agent type")
    if counts.get("flow_control", 0) > 1:
        add("error", path, "at most one flow_control capability per agent type")
    if counts.get("reinforcement_learning", 0) > 1:
        add("error", path, "at most one learning capability per agent type")
    fixed_plan = next(
        (c for c in agent.capabilities if c.kind == "state_machine" and c.target and model.plan(c.target)),
        None,
    )
    if fixed_plan is not None and counts.get("reinforcement_learning", 0) > 0:
        add("error", path, "an agent type cannot both run a fixed plan and learn plan selection")
    _check_plan_stream_refs(model, agent, stream_ids, add, path)


def _check_streams(model: Model, cap: CapabilityRef, add: _Collector, path: str) -> list[str] | None:
    if cap.streams is None:
        return None  # auto streams: one per incoming edge, ids s0, s1, ...
    ids: list[str] = []
    graph = model.graph_topology()
    inline = graph.source if graph is not None and isinstance(graph.source, InlineEdgeListStrategy) else None
    for stream in cap.streams:
        if stream.stream_id in ids:
            add("error", path, f"duplicate stream id '{stream.stream_id}'")
        ids.append(stream.stream_id)
        if stream.capacity is not None and stream.capacity < 1:
            add("error", path, f"stream '{stream.stream_id}' capacity must be positive")
        if stream.edge is not None and inline is not None:
            pair = frozenset(stream.edge)
            if not any(frozenset((e.source, e.target)) == pair for e in inline.edges):
                add("error", path, f"stream '{stream.stream_id}' references an edge not in the environment graph")
    return ids


def _check_plan_stream_refs(model: Model, agent: AgentTypeSpec, stream_ids: list[str] | None, add: _Collector, path: str) -> None:
    flow = agent.capability("flow_control")
    if flow is None:
        return
    used: list[str] = []
    machine_cap = agent.capability("state_machine")
    if machine_cap is not None and machine_cap.target and model.plan(machine_cap.target):
        used.append(machine_cap.target)
    learning = agent.capability("reinforcement_learning")
    if learning is not None and learning.qlearning is not None:
        used.extend(learning.qlearning.plans)
    for plan_name in used:
        plan = model.plan(plan_name)
        if plan is None:
            continue
        for phase in plan.phases:
            for ref in phase.green:
                if stream_ids is not None:
                    if ref not in stream_ids:
                        add("error", f"{path}", f"plan '{plan_name}' greens unknown stream '{ref}'")
                elif not (len(ref) > 1 and ref[0] == "s" and ref[1:].isdigit()):
                    add("error", f"{path}", f"plan '{plan_name}' greens '{ref}' but auto streams are named s0, s1, ...")


def _check_machine(model: Model, machine: sm.StateMachineSpec, envs, add: _Collector) -> None:
    path = f"machine:{machine.name}"
    states = set(machine.states)
    if len(states) != len(machine.states):
        add("error", path, "duplicate state names")
    if machine.initial not in states:
        add("error", path, f"initial state '{machine.initial}' is not declared")
    users = [a for a in model.agent_types if any(c.kind == "state_machine" and c.target == machine.name for c in a.capabilities)]
    guard_envs = [site_env(envs[a.name], True) for a in users] or [site_env(envs[None], True)]
    value_envs = [site_env(envs[a.name], False) for a in users] or [site_env(envs[None], False)]
    deterministic_at: dict[str, set[float]] = {}
    for i, tr in enumerate(machine.transitions):
        tpath = f"{path}.transition[{i}]"
        for end in (tr.source, tr.target):
            if end not in states:
                add("error", tpath, f"state '{end}' is not declared")
        if tr.abortion is not None and tr.abortion.abort_to not in states:
            add("error", tpath, f"abort state '{tr.abortion.abort_to}' is not declared")
        if tr.trigger is None:
            add("error", tpath, "transition has no trigger")
            continue
        _check_trigger(tr.trigger, guard_envs, value_envs, add, tpath)
        if tr.guard is not None:
            for genv in guard_envs:
                _check_expr(tr.guard, genv, (ex.BOOLEAN,), add, tpath, "guard")
        if tr.abortion is not None:
            prob = ex.literal_number(tr.abortion.probability)
            if prob is not None and not 0.0 <= prob <= 1.0:
                add("error", tpath, f"abort probability {prob} outside [0, 1]")
        if isinstance(tr.trigger, sm.DeterministicTrigger) and tr.guard is None:
            ticks = ex.literal_number(tr.trigger.ticks)
            if ticks is not None:
                taken = deterministic_at.setdefault(tr.source, set())
                if ticks in taken:
                    add("error", tpath, f"two transitions from '{tr.source}' fire deterministically at dwell {ticks:g}")
                taken.add(ticks)


def _check_trigger(trigger: sm.Trigger, guard_envs, value_envs, add: _Collector, path: str) -> None:
    if isinstance(trigger, sm.ProbabilisticTrigger):
        rate = ex.literal_number(trigger.rate)
        if rate is not None and not 0.0 <= rate <= 1.0:
            add("error", path, f"rate {rate} outside [0, 1]")
        for venv in value_envs:
            _check_expr(trigger.rate, venv, ex.NUMERIC, add, path, "rate")
    elif isinstance(trigger, sm.DeterministicTrigger):
        ticks = ex.literal_number(trigger.ticks)
        if ticks is not None and (ticks < 0 or ticks != int(ticks)):
            add("error", path, "deterministic duration must be a non-negative integer")
        for venv in value_envs:
            _check_expr(trigger.ticks, venv, ex.NUMERIC, add, path, "duration")
    elif isinstance(trigger, sm.ConditionalTrigger):
        for genv in guard_envs:
            _check_expr(trigger.condition, genv, (ex.BOOLEAN,), add, path, "condition")
    elif isinstance(trigger, sm.CompositeTrigger):
        if trigger.mode not in ("all_of", "any_of"):
            add("error", path, f"unknown composition '{trigger.mode}'")
        if not trigger.parts:
            add("error", path, "composite trigger needs at least one part")
        for part in trigger.parts:
            if isinstance(part, sm.InteractionTrigger):
                add("error", path, "interaction triggers cannot be composed")
            else:
                _check_trigger(part, guard_envs, value_envs, add, path)


def _check_disease(model: Model, spec: dz.DiseaseModelSpec, envs, add: _Collector) -> None:
    path = f"disease:{spec.name}"
    dz.validate_disease(spec, add, path)
    carriers = model.carriers(spec.name)
    if not carriers:
        add("warning", path, "disease is not attached to any agent type")
    guard_envs = [site_env(envs[a.name], True) for a in carriers] or [site_env(envs[None], True)]
    value_envs = [site_env(envs[a.name], False) for a in carriers] or [site_env(envs[None], False)]
    t = spec.transmission
    if t is not None:
        tpath = f"{path}.transmission"
        for venv in value_envs:
            _check_expr(t.probability, venv, ex.NUMERIC, add, tpath, "probability")
            if t.distance is not None:
                _check_expr(t.distance, venv, ex.NUMERIC, add, tpath, "distance")
        for source in t.sources:
            if model.entity_type(source) is None:
                add("error", tpath, f"unknown entity type '{source}'")
            elif t.condition is not None:
                seenv = site_env(envs[source], True)
                _check_expr(t.condition, seenv, (ex.BOOLEAN,), add, tpath, "condition")
        if t.condition is not None and not t.sources:
            for genv in guard_envs:
                _check_expr(t.condition, genv, (ex.BOOLEAN,), add, tpath, "condition")
    for prog in spec.progressions:
        _check_trigger(prog.trigger, guard_envs, value_envs, add, f"{path}.duration:{prog.compartment}")
    for extra, label in ((spec.passive_immunity, "passive"), (spec.recovered_immunity, "immunity")):
        if extra is not None:
            _check_trigger(extra, guard_envs, value_envs, add, f"{path}.{label}")
    for i, tr in enumerate(spec.custom_transitions):
        _check_trigger(tr.trigger, guard_envs, value_envs, add, f"{path}.transition[{i}]")
    for i, rule in enumerate(spec.mortality):
        mpath = f"{path}.mortality[{i}]"
        for venv in value_envs:
            _check_expr(rule.rate, venv, ex.NUMERIC, add, mpath, "rate")
        if rule.condition is not None:
            for genv in guard_envs:
                _check_expr(rule.condition, genv, (ex.BOOLEAN,), add, mpath, "condition")


def _check_introduction(model: Model, intro: dz.DiseaseIntroductionSpec, envs, add: _Collector, path: str) -> None:
    spec = model.disease(intro.disease)
    if spec is None:
        add("error", path, f"unknown disease '{intro.disease}'")
    if intro.quantity_kind == "deterministic":
        if intro.count is None or intro.count < 0:
            add("error", path, "deterministic quantity must be >= 0")
    elif intro.quantity_kind == "probabilistic":
        if intro.probability is None or not 0.0 <= intro.probability <= 1.0:
            add("error", path, "probabilistic quantity must lie in [0, 1]")
    else:
        add("error", path, f"unknown quantity kind '{intro.quantity_kind}'")
    if intro.periodicity == "periodic":
        if intro.interval is None or intro.interval < 1:
            add("error", path, "periodic interval must be at least 1")
    elif intro.periodicity != "aperiodic":
        add("error", path, f"unknown periodicity '{intro.periodicity}'")
    if intro.selection == "eligible":
        if intro.eligibility is None:
            add("error", path, "eligible selection requires a criterion expression")
        elif spec is not None:
            carriers = model.carriers(intro.disease)
            for carrier in carriers:
                _check_expr(intro.eligibility, site_env(envs[carrier.name], True), (ex.BOOLEAN,), add, path, "eligibility")
    elif intro.selection != "arbitrary":
        add("error", path, f"unknown selection '{intro.selection}'")


def _check_output(model: Model, output: OutputDatasetSpec, envs, add: _Collector) -> None:
    path = f"output:{output.name}"
    if output.interval < 1:
        add("error", path, "sampling interval must be at least 1 tick")
    if not output.path:
        add("error", path, "output path must not be empty")
    labels: set[str] = set()
    world_env = site_env(envs[None], True)
    for series in output.series:
        spath = f"{path}.series:{series.label}"
        if series.label in labels:
            add("error", spath, f"duplicate series label '{series.label}'")
        labels.add(series.label)
        _check_expr(series.value, world_env, ex.NUMERIC, add, spath, "series")


def _element_names(model: Model) -> dict[str, str]:
    names: dict[str, str] = {}
    for a in model.agent_types:
        names[a.name] = "agent"
    for e in model.entity_types:
        names[e.name] = "entity"
    for d in model.diseases:
        names[d.name] = "disease"
    for m in model.machines:
        names[m.name] = "machine"
    for p in model.plans:
        names[p.name] = "plan"
    for o in model.outputs:
        names[o.name] = "output"
    return names


def _check_concern(model: Model, concern: ConcernSpec, add: _Collector) -> None:
    known = _element_names(model)
    for member in concern.members:
        if member not in known:
            add("error", f"concern:{concern.name}", f"member '{member}' does not name a model element")


# ---------------------------------------------------------------------------
# Concern views


@dataclass(frozen=True)
class ConcernView:
    """Read-only closure of a concern: its members plus everything they reference."""

    concern: str
    agent_types: frozenset[str]
    entity_types: frozenset[str]
    diseases: frozenset[str]
    machines: frozenset[str]
    plans: frozenset[str]
    outputs: frozenset[str]

    def element_names(self) -> frozenset[str]:
        return frozenset(
            set(self.agent_types)
            | set(self.entity_types)
            | set(self.diseases)
            | set(self.machines)
            | set(self.plans)
            | set(self.outputs)
        )

    def is_empty(self) -> bool:
        return not self.element_names()


def _expr_references(expr_: ex.Expr | None, model: Model) -> set[str]:
    refs: set[str] = set()
    if expr_ is None:
        return refs
    known = _element_names(model)
    for node in ex.walk(expr_):
        if isinstance(node, ex.Aggregate) and node.population in known:
            refs.add(node.population)
        elif isinstance(node, ex.StateTest) and node.machine in known:
            refs.add(node.machine)
        elif isinstance(node, ex.AttrRef) and node.owner in known:
            refs.add(node.owner)
    return refs


def _trigger_exprs(trigger: sm.Trigger | None) -> list[ex.Expr]:
    if trigger is None or isinstance(trigger, sm.InteractionTrigger):
        return []
    if isinstance(trigger, sm.ProbabilisticTrigger):
        return [trigger.rate]
    if isinstance(trigger, sm.DeterministicTrigger):
        return [trigger.ticks]
    if isinstance(trigger, sm.ConditionalTrigger):
        return [trigger.condition]
    out: list[ex.Expr] = []
    for part in trigger.parts:
        out.extend(_trigger_exprs(part))
    return out


def _direct_references(model: Model, name: str, category: str) -> set[str]:
    refs: set[str] = set()
    exprs: list[ex.Expr | None] = []
    if category == "agent":
        agent = model.agent_type(name)
        if agent is None:
            return refs
        for cap in agent.capabilities:
            if cap.kind in ("disease", "state_machine") and cap.target:
                refs.add(cap.target)
            if cap.qlearning is not None:
                refs.update(cap.qlearning.plans)
                exprs.append(cap.qlearning.reward)
            exprs.extend(cap.parameters.values())
        exprs.extend(a.default for a in agent.attributes)
    elif category == "entity":
        entity = model.entity_type(name)
        if entity is not None:
            exprs.extend(a.default for a in entity.attributes)
    elif category == "disease":
        spec = model.disease(name)
        if spec is not None:
            if spec.transmission is not None:
                refs.update(spec.transmission.sources)
                exprs.extend([spec.transmission.probability, spec.transmission.distance, spec.transmission.condition])
            for prog in spec.progressions:
                exprs.extend(_trigger_exprs(prog.trigger))
            for tr in spec.custom_transitions:
                exprs.extend(_trigger_exprs(tr.trigger))
            exprs.extend(_trigger_exprs(spec.passive_immunity))
            exprs.extend(_trigger_exprs(spec.recovered_immunity))
            for rule in spec.mortality:
                exprs.extend([rule.rate, rule.condition])
    elif category == "machine":
        machine = model.machine(name)
        if machine is not None:
            for tr in machine.transitions:
                exprs.extend(_trigger_exprs(tr.trigger))
                exprs.append(tr.guard)
                if tr.abortion is not None:
                    exprs.append(tr.abortion.probability)
    elif category == "output":
        output = next((o for o in model.outputs if o.name == name), None)
        if output is not None:
            exprs.extend(s.value for s in output.series)
    for expr_ in exprs:
        refs.update(_expr_references(expr_, model))
    return refs


def resolve_concern(model: Model, concern_name: str) -> ConcernView:
    """The concern's members plus every element transitively referenced.

    Raises :class:`AbmsError` for an unknown concern name.
    """
    concern = next((c for c in model.concerns if c.name == concern_name), None)
    if concern is None:
        raise AbmsError(f"unknown concern '{concern_name}'")
    known = _element_names(model)
    reached: set[str] = set()
    frontier = [m for m in concern.members if m in known]
    while frontier:
        name = frontier.pop()
        if name in reached:
            continue
        reached.add(name)
        for ref in sorted(_direct_references(model, name, known[name])):
            if ref in known and ref not in reached:
                frontier.append(ref)
    def of(category: str) -> frozenset[str]:
        return frozenset(n for n in reached if known[n] == category)
    return ConcernView(
        concern=concern_name,
        agent_types=of("agent"),
        entity_types=of("entity"),
        diseases=of("disease"),
        machines=of("machine"),
        plans=of("plan"),
        outputs=of("output"),
    )

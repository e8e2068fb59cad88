"""Deterministic discrete-time simulation runtime.

One run consumes a single seeded PRNG stream in a fixed schedule, so identical
(model, seed, max_ticks) triples produce byte-identical outputs.  Each tick:

  1. controller tasks: periodic disease introductions
  2. per agent in ascending id: mobility, signal plan machines, generic state
     machines, then the disease step (transmission attempt when susceptible,
     otherwise mortality and progression) with disease changes buffered
  3. buffered disease changes applied; dead agents removed
  4. vehicle movement and queue service on graph environments
  5. learning updates for controllers whose plan cycle completed
  6. output sampling when the new tick hits a dataset interval

Reordering these phases is a breaking change for reproducibility.
"""

from __future__ import annotations

import hashlib
import math
import os
import random
from dataclasses import dataclass, field
from pathlib import Path

from . import disease as dz
from . import expr as ex
from . import metamodel as mm
from . import statemachine as sm
from . import traffic as tf
from .errors import EngineError, EvalError
from .ingest import Graph, graph_from_inline, load_gis_points, load_osm_graph

INTERSECTION_DEGREE = 3


@dataclass
class RunConfig:
    seed: int = 42
    max_ticks: int = 100
    out_dir: str | Path = "."
    base_dir: str | Path = "."  # input files resolve against this


# ---------------------------------------------------------------------------
# Positions


@dataclass(frozen=True)
class NodePos:
    node: str


@dataclass(frozen=True)
class EdgePos:
    source: str
    target: str
    remaining: int
    total: int


@dataclass(frozen=True)
class QueuePos:
    node: str
    from_node: str


Position = "tuple | NodePos | EdgePos | QueuePos"


# ---------------------------------------------------------------------------
# Runtime instances


@dataclass
class ControllerState:
    node: str
    streams: list[str]  # from-node per stream index
    stream_ids: list[str]  # declared or auto ids, aligned with streams
    capacities: dict[str, int]  # from-node -> queue bound
    plan: tf.PlanSpec | None = None
    machine: sm.MachineInstance | None = None
    green: set[int] = field(default_factory=set)
    ticks_in_cycle: int = 0
    learner: "LearnerState | None" = None


@dataclass
class LearnerState:
    spec: tf.QLearningSpec
    table: tf.QTable
    prev_state: tuple
    prev_action: str
    accumulated: float = 0.0
    updates: int = 0


@dataclass
class AgentInstance:
    id: int
    type_name: str
    position: object
    attrs: dict[str, object] = field(default_factory=dict)
    machines: dict[str, sm.MachineInstance] = field(default_factory=dict)
    diseases: dict[str, sm.MachineInstance] = field(default_factory=dict)
    controller: ControllerState | None = None
    speed: float = 0.0  # vehicles: length units per tick


@dataclass
class EntityInstance:
    id: int
    type_name: str
    position: object
    attrs: dict[str, object] = field(default_factory=dict)


class World:
    """Mutable simulation state; advanced in place by :func:`tick`."""

    def __init__(self, model: mm.Model, config: RunConfig):
        self.model = model
        self.config = config
        self.tick = 0
        self.rng = random.Random(config.seed)
        self.agents: dict[int, AgentInstance] = {}
        self.entities: dict[int, EntityInstance] = {}
        self.graph: Graph | None = None
        self.queues: dict[tuple[str, str], list[int]] = {}
        self.controllers_by_node: dict[str, int] = {}
        self.created: dict[str, int] = {}
        self.dead: dict[str, int] = {}
        self.deaths_by_disease: dict[str, int] = {}
        self.ever_infected: dict[str, int] = {}
        self.arrivals = 0
        self.output_rows: dict[str, list[list]] = {o.name: [] for o in model.outputs}
        self._next_id = 0
        self._cells: dict[tuple[int, int], set[int]] = {}
        self._machine_cache: dict[str, sm.StateMachineSpec] = {}

    # -- ids and spatial index ------------------------------------------------

    def new_id(self) -> int:
        self._next_id += 1
        return self._next_id - 1

    def _cell_of(self, position) -> tuple[int, int] | None:
        if isinstance(position, tuple):
            return (int(math.floor(position[0])), int(math.floor(position[1])))
        return None  # graph positions are scanned linearly

    def index_add(self, item_id: int, position) -> None:
        cell = self._cell_of(position)
        if cell is not None:
            self._cells.setdefault(cell, set()).add(item_id)

    def index_remove(self, item_id: int, position) -> None:
        cell = self._cell_of(position)
        if cell is not None:
            bucket = self._cells.get(cell)
            if bucket is not None:
                bucket.discard(item_id)

    def index_move(self, item_id: int, old, new) -> None:
        if old != new:
            self.index_remove(item_id, old)
            self.index_add(item_id, new)

    # -- geometry ---------------------------------------------------------------

    def topology(self):
        assert self.model.environment is not None
        return self.model.environment.topology

    def coords(self, position) -> tuple[float, float]:
        if isinstance(position, tuple):
            return (float(position[0]), float(position[1]))
        assert self.graph is not None
        if isinstance(position, NodePos):
            return self.graph.nodes[position.node]
        if isinstance(position, QueuePos):
            return self.graph.nodes[position.node]
        if isinstance(position, EdgePos):
            sx, sy = self.graph.nodes[position.source]
            txx, tyy = self.graph.nodes[position.target]
            frac = 1.0 - (position.remaining / position.total) if position.total else 1.0
            return (sx + (txx - sx) * frac, sy + (tyy - sy) * frac)
        raise EngineError(f"position {position!r} has no coordinates")

    def distance(self, a, b) -> float:
        ax, ay = self.coords(a)
        bx, by = self.coords(b)
        dx, dy = abs(ax - bx), abs(ay - by)
        topo = self.topology()
        if isinstance(topo, mm.GridTopology) and topo.wrap:
            dx = min(dx, topo.width - dx)
            dy = min(dy, topo.height - dy)
        return math.hypot(dx, dy)

    def disease_machine(self, name: str) -> sm.StateMachineSpec:
        if name not in self._machine_cache:
            spec = self.model.disease(name)
            assert spec is not None
            self._machine_cache[name] = dz.build_machine(spec)
        return self._machine_cache[name]

    # -- digests ------------------------------------------------------------------

    def digest(self) -> str:
        """Stable hash of the full runtime state (used for determinism checks)."""
        h = hashlib.sha256()

        def put(text: str) -> None:
            h.update(text.encode("utf-8"))
            h.update(b"\x00")

        put(f"tick={self.tick}")
        for aid in sorted(self.agents):
            agent = self.agents[aid]
            put(f"A{aid}:{agent.type_name}:{agent.position!r}")
            for key in sorted(agent.attrs):
                put(f"{key}={agent.attrs[key]!r}")
            for name in sorted(agent.machines):
                inst = agent.machines[name]
                put(f"m:{name}:{inst.current}:{inst.dwell}")
            for name in sorted(agent.diseases):
                inst = agent.diseases[name]
                put(f"d:{name}:{inst.current}:{inst.dwell}")
            ctrl = agent.controller
            if ctrl is not None:
                put(f"c:{ctrl.node}:{ctrl.plan.name if ctrl.plan else '-'}:"
                    f"{ctrl.machine.current if ctrl.machine else '-'}:{sorted(ctrl.green)}:{ctrl.ticks_in_cycle}")
                if ctrl.learner is not None:
                    put(f"q:{ctrl.learner.prev_action}:{ctrl.learner.accumulated!r}")
                    for key, value in sorted(ctrl.learner.table.items()):
                        put(f"{key!r}={value!r}")
        for eid in sorted(self.entities):
            entity = self.entities[eid]
            put(f"E{eid}:{entity.type_name}:{entity.position!r}")
            for key in sorted(entity.attrs):
                put(f"{key}={entity.attrs[key]!r}")
        for key in sorted(self.queues):
            put(f"Q{key!r}:{self.queues[key]!r}")
        for label, counter in (
            ("deaths", self.deaths_by_disease),
            ("ever", self.ever_infected),
            ("dead", self.dead),
        ):
            for key in sorted(counter):
                put(f"{label}:{key}={counter[key]}")
        put(f"arrivals={self.arrivals}")
        return h.hexdigest()


# ---------------------------------------------------------------------------
# Evaluation contexts


class WorldContext(ex.Context):
    def __init__(self, world: World):
        self.world = world

    def attribute(self, owner, name):
        if owner is None and name == "tick":
            return self.world.tick
        raise EvalError(f"unknown attribute '{name}'")

    def population(self, type_name: str):
        world = self.world
        if world.model.agent_type(type_name) is not None:
            return [
                AgentContext(world, world.agents[aid])
                for aid in sorted(world.agents)
                if world.agents[aid].type_name == type_name
            ]
        if world.model.entity_type(type_name) is not None:
            return [
                EntityContext(world, world.entities[eid])
                for eid in sorted(world.entities)
                if world.entities[eid].type_name == type_name
            ]
        raise EvalError(f"unknown population '{type_name}'")


class AgentContext(WorldContext):
    def __init__(self, world: World, agent: AgentInstance):
        super().__init__(world)
        self.agent = agent

    def attribute(self, owner, name):
        if owner is not None and owner != self.agent.type_name:
            raise EvalError(f"'{owner}.{name}' does not resolve on {self.agent.type_name}")
        if name in self.agent.attrs:
            return self.agent.attrs[name]
        if name == "tick":
            return self.world.tick
        if name == "stopped" and self.agent.controller is not None:
            return controller_stopped(self.world, self.agent.controller)
        raise EvalError(f"unknown attribute '{name}'")

    def machine_state(self, name: str) -> str:
        if name in self.agent.diseases:
            return self.agent.diseases[name].current
        if name in self.agent.machines:
            return self.agent.machines[name].current
        ctrl = self.agent.controller
        if ctrl is not None and ctrl.plan is not None and ctrl.plan.name == name and ctrl.machine is not None:
            return ctrl.machine.current
        raise EvalError(f"no state machine or disease named '{name}' on this agent")


class EntityContext(WorldContext):
    def __init__(self, world: World, entity: EntityInstance):
        super().__init__(world)
        self.entity = entity

    def attribute(self, owner, name):
        if owner is not None and owner != self.entity.type_name:
            raise EvalError(f"'{owner}.{name}' does not resolve on {self.entity.type_name}")
        if name in self.entity.attrs:
            return self.entity.attrs[name]
        if name == "tick":
            return self.world.tick
        raise EvalError(f"unknown attribute '{name}'")


def _eval(expr_, ctx: ex.Context, world: World, path: str):
    try:
        return ex.evaluate(expr_, ctx)
    except EvalError as err:
        raise EngineError(f"tick {world.tick}: {path}: {err.message}") from None


def _eval_number(expr_, ctx, world, path) -> float:
    value = _eval(expr_, ctx, world, path)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise EngineError(f"tick {world.tick}: {path}: expected a number, got {type(value).__name__}")
    return float(value)


# ---------------------------------------------------------------------------
# World construction


_ZERO_VALUES = {
    ex.INTEGER: 0,
    ex.REAL: 0.0,
    ex.BOOLEAN: False,
    ex.TEXT: "",
    ex.IDENTIFIER: "",
}


def _convert_raw(raw: str, kind: str, where: str):
    try:
        if kind == ex.INTEGER:
            return int(raw)
        if kind == ex.REAL:
            return float(raw)
        if kind == ex.BOOLEAN:
            if raw in ("true", "1"):
                return True
            if raw in ("false", "0"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise EngineError(f"{where}: cannot read '{raw}' as {kind}") from None


def _resolve(path: str, config: RunConfig) -> Path:
    p = Path(path)
    return p if p.is_absolute() else Path(config.base_dir) / p


def build_world(model: mm.Model, config: RunConfig) -> World:
    """Realize the environment, run every creational strategy in declaration
    order, then apply introductions due at tick 0."""
    report = mm.validate(model)
    if not report.ok():
        first = "; ".join(str(d) for d in report.errors()[:3])
        raise EngineError(f"model failed validation: {first}")
    world = World(model, config)
    topo = world.topology()
    if isinstance(topo, mm.GraphTopology):
        if isinstance(topo.source, mm.OsmGraphStrategy):
            world.graph = load_osm_graph(_resolve(topo.source.path, config))
        else:
            assert isinstance(topo.source, mm.InlineEdgeListStrategy)
            world.graph = graph_from_inline(topo.source.nodes, topo.source.edges)
    for agent_type in model.agent_types:
        for cap in agent_type.capabilities:
            if cap.kind == "external":
                library = cap.parameters.get("library")
                lib_path = _resolve(str(library.value), config) if isinstance(library, ex.Literal) else None
                if lib_path is None or not lib_path.exists():
                    raise EngineError(
                        f"agent:{agent_type.name}: external capability library "
                        f"'{lib_path}' does not exist"
                    )
    for kind, spec in _creation_order(model):
        if kind == "entity":
            _create_entities(world, spec)
        else:
            _create_agents(world, spec)
    for intro in model.introductions:
        _apply_introduction(world, intro, set())
    return world


def _creation_order(model: mm.Model):
    items = [("entity", e) for e in model.entity_types] + [("agent", a) for a in model.agent_types]

    def key(pair):
        index, (_, spec) = pair
        span = spec.span
        if span is None:
            return (1, 0, 0, index)
        return (0, span.start_line, span.start_col, index)

    return [item for _, item in sorted(enumerate(items), key=key)]


def _positions_for(world: World, strategy: mm.CreationalStrategy, type_name: str) -> list:
    topo = world.topology()
    config = world.config
    rng = world.rng
    out: list = []
    if isinstance(strategy, mm.FixedCountStrategy):
        if strategy.placement is None:
            for _ in range(strategy.count):
                if isinstance(topo, mm.GridTopology):
                    out.append((rng.randrange(topo.width), rng.randrange(topo.height)))
                elif isinstance(topo, mm.CartesianTopology):
                    x = topo.x_min + rng.random() * (topo.x_max - topo.x_min)
                    y = topo.y_min + rng.random() * (topo.y_max - topo.y_min)
                    out.append((x, y))
                else:
                    assert world.graph is not None
                    nodes = world.graph.sorted_nodes()
                    if not nodes:
                        raise EngineError(f"{type_name}: cannot place agents on an empty graph")
                    out.append(NodePos(nodes[rng.randrange(len(nodes))]))
        else:
            ctx = WorldContext(world)
            spots = []
            for x_expr, y_expr in strategy.placement:
                x = _eval_number(x_expr, ctx, world, f"{type_name}: position")
                y = _eval_number(y_expr, ctx, world, f"{type_name}: position")
                spots.append(_place_at(world, x, y, type_name))
            for i in range(strategy.count):
                out.append(spots[i % len(spots)])
    elif isinstance(strategy, mm.GisPointsStrategy):
        for point in load_gis_points(_resolve(strategy.path, config)):
            out.append(_place_at(world, point.x, point.y, type_name, line=point.line))
    elif isinstance(strategy, mm.OsmGraphStrategy):
        assert world.graph is not None
        for node in world.graph.intersections(INTERSECTION_DEGREE):
            out.append(NodePos(node))
    else:
        raise EngineError(f"{type_name}: unsupported creational strategy")
    return out


def _place_at(world: World, x: float, y: float, type_name: str, line: int | None = None):
    topo = world.topology()
    where = f"{type_name}" + (f" (point file line {line})" if line else "")
    if isinstance(topo, mm.GridTopology):
        cx, cy = int(round(x)), int(round(y))
        if topo.wrap:
            cx, cy = cx % topo.width, cy % topo.height
        if not (0 <= cx < topo.width and 0 <= cy < topo.height):
            raise EngineError(f"{where}: position ({x:g}, {y:g}) outside the {topo.width}x{topo.height} grid")
        return (cx, cy)
    if isinstance(topo, mm.CartesianTopology):
        if not (topo.x_min <= x <= topo.x_max and topo.y_min <= y <= topo.y_max):
            raise EngineError(f"{where}: position ({x:g}, {y:g}) outside the cartesian bounds")
        return (float(x), float(y))
    raise EngineError(f"{where}: explicit coordinates require a grid or cartesian environment")


def _init_attrs(world: World, instance, attributes: list[mm.AttributeSpec], overrides: dict[str, str], where: str, ctx) -> None:
    for attr in attributes:
        if attr.name in overrides:
            instance.attrs[attr.name] = _convert_raw(overrides[attr.name], attr.kind, where)
        elif attr.default is not None:
            value = _eval(attr.default, ctx, world, f"{where}.attr:{attr.name}")
            if attr.kind == ex.REAL and isinstance(value, int):
                value = float(value)
            instance.attrs[attr.name] = value
        else:
            instance.attrs[attr.name] = _ZERO_VALUES[attr.kind]
    for key in overrides:
        if key not in {a.name for a in attributes}:
            raise EngineError(f"{where}: point file sets unknown attribute '{key}'")


def _create_entities(world: World, spec: mm.EntityTypeSpec) -> None:
    gis_points = None
    if isinstance(spec.creation, mm.GisPointsStrategy):
        gis_points = load_gis_points(_resolve(spec.creation.path, world.config))
    positions = _positions_for(world, spec.creation, f"entity:{spec.name}")
    for i, position in enumerate(positions):
        entity = EntityInstance(world.new_id(), spec.name, position)
        overrides = gis_points[i].attrs if gis_points is not None else {}
        _init_attrs(world, entity, spec.attributes, overrides, f"entity:{spec.name}", EntityContext(world, entity))
        world.entities[entity.id] = entity
        world.index_add(entity.id, position)


def _create_agents(world: World, spec: mm.AgentTypeSpec) -> None:
    gis_points = None
    if isinstance(spec.creation, mm.GisPointsStrategy):
        gis_points = load_gis_points(_resolve(spec.creation.path, world.config))
    positions = _positions_for(world, spec.creation, f"agent:{spec.name}")
    model = world.model
    for i, position in enumerate(positions):
        agent = AgentInstance(world.new_id(), spec.name, position)
        for cap in spec.capabilities:
            if cap.kind == "disease" and cap.target:
                agent.diseases[cap.target] = sm.instantiate(world.disease_machine(cap.target))
            elif cap.kind == "state_machine" and cap.target and model.machine(cap.target) is not None:
                agent.machines[cap.target] = sm.instantiate(model.machine(cap.target))
        overrides = gis_points[i].attrs if gis_points is not None else {}
        _init_attrs(world, agent, spec.attributes, overrides, f"agent:{spec.name}", AgentContext(world, agent))
        world.agents[agent.id] = agent
        world.index_add(agent.id, position)
        world.created[spec.name] = world.created.get(spec.name, 0) + 1
        mobility = spec.capability("mobility")
        if mobility is not None and world.graph is not None:
            agent.speed = _eval_number(
                mobility.parameters["step"], AgentContext(world, agent), world, f"agent:{spec.name}: mobility step"
            )
            if agent.speed <= 0:
                raise EngineError(f"agent:{spec.name}: vehicle speed must be positive on graphs")
            _vehicle_enter_random_edge(world, agent)
        flow = spec.capability("flow_control")
        if flow is not None:
            _init_controller(world, agent, spec, flow)


def _vehicle_enter_random_edge(world: World, agent: AgentInstance) -> None:
    assert world.graph is not None
    if not isinstance(agent.position, NodePos):
        return
    node = agent.position.node
    nbrs = world.graph.neighbors(node)
    if not nbrs:
        return
    target = nbrs[world.rng.randrange(len(nbrs))]
    ticks = max(1, math.ceil(world.graph.edge_length(node, target) / agent.speed))
    agent.position = EdgePos(node, target, ticks, ticks)


def _init_controller(world: World, agent: AgentInstance, spec: mm.AgentTypeSpec, flow: mm.CapabilityRef) -> None:
    if not isinstance(agent.position, NodePos) or world.graph is None:
        raise EngineError(f"agent:{spec.name}: flow control requires the agent to sit on a graph node")
    node = agent.position.node
    capacities: dict[str, int] = {}
    if flow.streams is None:
        froms = world.graph.neighbors(node)
        ids = [f"s{i}" for i in range(len(froms))]
    else:
        froms, ids = [], []
        for stream in flow.streams:
            a, b = stream.edge  # type: ignore[misc]
            if node == a:
                frm = b
            elif node == b:
                frm = a
            else:
                continue  # stream's edge does not touch this intersection
            froms.append(frm)
            ids.append(stream.stream_id)
            if stream.capacity is not None:
                capacities[frm] = stream.capacity
    ctrl = ControllerState(node=node, streams=froms, stream_ids=ids, capacities=capacities)
    agent.controller = ctrl
    world.controllers_by_node.setdefault(node, agent.id)
    model = world.model
    machine_cap = spec.capability("state_machine")
    if machine_cap is not None and machine_cap.target and model.plan(machine_cap.target) is not None:
        _controller_set_plan(ctrl, model.plan(machine_cap.target))
    learning = spec.capability("reinforcement_learning")
    if learning is not None and learning.qlearning is not None:
        qspec = learning.qlearning
        state = tf.discretize_state(_queue_lengths(world, ctrl), qspec.bins)
        action = tf.select_action(tf.QTable(), state, qspec.plans, qspec.epsilon, world.rng)
        ctrl.learner = LearnerState(spec=qspec, table=tf.QTable(), prev_state=state, prev_action=action)
        _controller_set_plan(ctrl, model.plan(action))


def _controller_set_plan(ctrl: ControllerState, plan: tf.PlanSpec | None) -> None:
    assert plan is not None
    ctrl.plan = plan
    ctrl.machine = sm.instantiate(tf.plan_to_machine(plan))
    ctrl.ticks_in_cycle = 0
    _controller_apply_phase(ctrl)


def _controller_apply_phase(ctrl: ControllerState) -> None:
    if ctrl.plan is None or ctrl.machine is None:
        ctrl.green = set(range(len(ctrl.streams)))
        return
    phase = next(p for p in ctrl.plan.phases if p.name == ctrl.machine.current)
    green_ids = set(phase.green)
    ctrl.green = {i for i, sid in enumerate(ctrl.stream_ids) if sid in green_ids}


def _queue_lengths(world: World, ctrl: ControllerState) -> list[int]:
    return [len(world.queues.get((ctrl.node, frm), [])) for frm in ctrl.streams]


def controller_stopped(world: World, ctrl: ControllerState) -> int:
    return tf.stopped_vehicles(_queue_lengths(world, ctrl), ctrl.green)


# ---------------------------------------------------------------------------
# Introductions


def _apply_introduction(world: World, intro: dz.DiseaseIntroductionSpec, infected_now: set) -> None:
    spec = world.model.disease(intro.disease)
    assert spec is not None
    if not dz.introduction_due(intro, world.tick):
        return
    susceptible = dz.susceptible_compartment(spec)
    pool = [
        (aid, AgentContext(world, agent))
        for aid, agent in sorted(world.agents.items())
        if (inst := agent.diseases.get(intro.disease)) is not None and inst.current == susceptible
    ]
    try:
        chosen = dz.introduce(pool, intro, world.tick, world.rng)
    except EvalError as err:
        raise EngineError(f"tick {world.tick}: introduce {intro.disease}: {err.message}") from None
    target = dz.infection_target(spec)
    for aid in chosen:
        sm.force_state(world.agents[aid].diseases[intro.disease], target)
        world.ever_infected[intro.disease] = world.ever_infected.get(intro.disease, 0) + 1
        infected_now.add((aid, intro.disease))


# ---------------------------------------------------------------------------
# Mobility


def mobility_step(world: World, agent: AgentInstance, step_expr: ex.Expr, rng: random.Random):
    """New position for one random-walk step (graph agents move in phase 4)."""
    topo = world.topology()
    ctx = AgentContext(world, agent)
    step = _eval_number(step_expr, ctx, world, f"agent:{agent.type_name}: mobility step")
    if isinstance(topo, mm.GridTopology):
        # 8-neighborhood plus "stay", all nine outcomes equally likely.
        pick = rng.randrange(9)
        dx, dy = pick % 3 - 1, pick // 3 - 1
        span = int(round(step))
        x, y = agent.position  # type: ignore[misc]
        nx, ny = x + dx * span, y + dy * span
        if topo.wrap:
            return (nx % topo.width, ny % topo.height)
        return (min(max(nx, 0), topo.width - 1), min(max(ny, 0), topo.height - 1))
    if isinstance(topo, mm.CartesianTopology):
        angle = rng.random() * 2.0 * math.pi
        x, y = agent.position  # type: ignore[misc]
        nx = min(max(x + math.cos(angle) * step, topo.x_min), topo.x_max)
        ny = min(max(y + math.sin(angle) * step, topo.y_min), topo.y_max)
        return (nx, ny)
    return agent.position


# ---------------------------------------------------------------------------
# Neighbor queries


def neighbors_within(world: World, position, radius: float, exclude: int | None = None) -> list[int]:
    """Agent ids with Euclidean distance <= radius (toroidal on wrapped
    grids), ascending, excluding ``exclude``."""
    return [i for i in _scan_ids(world, position, radius, exclude) if i in world.agents]


def _nearby_source_ids(world: World, position, radius: float, exclude: int) -> list[int]:
    return _scan_ids(world, position, radius, exclude)


def _scan_ids(world: World, position, radius: float, exclude: int | None) -> list[int]:
    topo = world.topology()
    out: list[int] = []
    if isinstance(topo, (mm.GridTopology, mm.CartesianTopology)) and isinstance(position, tuple):
        px, py = position
        reach = int(math.floor(radius)) + 1
        cx, cy = int(math.floor(px)), int(math.floor(py))
        cells_x = range(cx - reach, cx + reach + 1)
        cells_y = range(cy - reach, cy + reach + 1)
        wrap = isinstance(topo, mm.GridTopology) and topo.wrap
        seen: set[tuple[int, int]] = set()
        for gx in cells_x:
            for gy in cells_y:
                cell = ((gx % topo.width, gy % topo.height) if wrap else (gx, gy))
                if cell in seen:
                    continue
                seen.add(cell)
                for item_id in world._cells.get(cell, ()):
                    if item_id == exclude:
                        continue
                    item = world.agents.get(item_id) or world.entities.get(item_id)
                    if item is not None and world.distance(position, item.position) <= radius:
                        out.append(item_id)
        return sorted(out)
    for item_id in sorted(set(world.agents) | set(world.entities)):
        if item_id == exclude:
            continue
        item = world.agents.get(item_id) or world.entities.get(item_id)
        if item is not None and world.distance(position, item.position) <= radius:
            out.append(item_id)
    return out


# ---------------------------------------------------------------------------
# The tick


def tick(world: World) -> World:
    """Advance the world by one tick in the fixed phase order."""
    model = world.model
    world.tick += 1
    infected_now: set[tuple[int, str]] = set()

    # Phase 1: controller tasks (periodic introductions).
    for intro in model.introductions:
        if intro.periodicity == "periodic":
            _apply_introduction(world, intro, infected_now)

    # Phase 2: per-agent behavior, disease changes buffered.
    infections: list[tuple[int, str, str]] = []
    machine_updates: list[tuple[int, str, sm.MachineInstance]] = []
    dying: list[tuple[int, str]] = []
    for aid in list(world.agents):
        agent = world.agents[aid]
        spec = model.agent_type(agent.type_name)
        assert spec is not None
        mobility = spec.capability("mobility")
        if mobility is not None and world.graph is None:
            new_pos = mobility_step(world, agent, mobility.parameters["step"], world.rng)
            world.index_move(aid, agent.position, new_pos)
            agent.position = new_pos
        if agent.controller is not None and agent.controller.machine is not None:
            ctx = AgentContext(world, agent)
            _step_machine_checked(world, agent.controller.machine, ctx, f"agent:{agent.type_name}: plan")
            agent.controller.ticks_in_cycle += 1
            _controller_apply_phase(agent.controller)
        for name, inst in agent.machines.items():
            if not inst.terminated:
                ctx = AgentContext(world, agent)
                _step_machine_checked(world, inst, ctx, f"machine:{name}")
        for disease_name in agent.diseases:
            if (aid, disease_name) in infected_now:
                continue
            outcome = _disease_step(world, agent, disease_name)
            if outcome is None:
                continue
            kind, payload = outcome
            if kind == "infect":
                infections.append((aid, disease_name, payload))
            elif kind == "update":
                machine_updates.append((aid, disease_name, payload))
            else:
                dying.append((aid, disease_name))

    # Phase 3: apply buffered disease changes, then remove the dead.
    for aid, disease_name, target in infections:
        sm.force_state(world.agents[aid].diseases[disease_name], target)
        world.ever_infected[disease_name] = world.ever_infected.get(disease_name, 0) + 1
    for aid, disease_name, snapshot in machine_updates:
        inst = world.agents[aid].diseases[disease_name]
        inst.current, inst.dwell, inst.terminated = snapshot.current, snapshot.dwell, snapshot.terminated
        if inst.terminated:
            dying.append((aid, disease_name))
    removed: set[int] = set()
    for aid, disease_name in dying:
        if aid in removed:
            continue
        removed.add(aid)
        world.deaths_by_disease[disease_name] = world.deaths_by_disease.get(disease_name, 0) + 1
        _remove_agent(world, aid)

    # Phase 4: vehicle movement, then queue service.
    if world.graph is not None:
        _vehicle_phase(world)

    # Phase 5: learning updates for completed plan cycles.
    for aid in sorted(world.agents):
        ctrl = world.agents[aid].controller
        if ctrl is None or ctrl.learner is None:
            continue
        _learning_phase(world, world.agents[aid], ctrl)

    # Phase 6: output sampling.
    for output in model.outputs:
        if world.tick % output.interval == 0:
            sample_output(world, output)
    return world


def _step_machine_checked(world: World, inst: sm.MachineInstance, ctx, path: str):
    try:
        return sm.step(inst, ctx, world.rng)
    except EvalError as err:
        raise EngineError(f"tick {world.tick}: {path}: {err.message}") from None


def _disease_step(world: World, agent: AgentInstance, disease_name: str):
    spec = world.model.disease(disease_name)
    assert spec is not None
    inst = agent.diseases[disease_name]
    if inst.terminated:
        return None
    ctx = AgentContext(world, agent)
    # Per-tick death rates apply in any compartment, before transmission or
    # progression can move the agent on.
    tick_rules = [m for m in spec.mortality if m.compartment == inst.current and m.evaluation != dz.LEAVING_COMPARTMENT]
    if tick_rules:
        try:
            dies = dz.evaluate_mortality(tick_rules, "tick", ctx, world.tick, world.rng)
        except EvalError as err:
            raise EngineError(f"tick {world.tick}: disease:{disease_name}.mortality: {err.message}") from None
        if dies:
            return ("die", inst.current)
    if inst.current == dz.susceptible_compartment(spec) and spec.transmission is not None:
        t = spec.transmission
        radius = 0.0
        if t.interaction == dz.PROXIMITY and t.distance is not None:
            radius = _eval_number(t.distance, ctx, world, f"disease:{disease_name}.transmission")
        candidate_ids = _nearby_source_ids(world, agent.position, radius, agent.id)
        candidates = []
        for cid in candidate_ids:
            other = world.agents.get(cid)
            if other is not None:
                state = other.diseases[disease_name].current if disease_name in other.diseases else None
                candidates.append(dz.Candidate(cid, False, other.type_name, AgentContext(world, other), state))
            else:
                entity = world.entities[cid]
                candidates.append(dz.Candidate(cid, True, entity.type_name, EntityContext(world, entity), None))
        try:
            hit = dz.attempt_transmission(ctx, candidates, t, dz.infectious_states(spec), world.rng)
        except EvalError as err:
            raise EngineError(f"tick {world.tick}: disease:{disease_name}.transmission: {err.message}") from None
        if hit:
            return ("infect", dz.infection_target(spec))
        return None
    snapshot = inst.clone()
    _step_machine_checked(world, snapshot, ctx, f"disease:{disease_name}")
    return ("update", snapshot)


def _remove_agent(world: World, aid: int) -> None:
    agent = world.agents.pop(aid, None)
    if agent is None:
        return
    world.index_remove(aid, agent.position)
    world.dead[agent.type_name] = world.dead.get(agent.type_name, 0) + 1
    if isinstance(agent.position, QueuePos):
        queue = world.queues.get((agent.position.node, agent.position.from_node))
        if queue and aid in queue:
            queue.remove(aid)
    if agent.controller is not None:
        node = agent.controller.node
        if world.controllers_by_node.get(node) == aid:
            del world.controllers_by_node[node]


def _vehicle_phase(world: World) -> None:
    graph = world.graph
    assert graph is not None
    # Movement: progress along edges; completed traversals join the queue.
    for aid in sorted(world.agents):
        agent = world.agents[aid]
        pos = agent.position
        if not isinstance(pos, EdgePos):
            continue
        remaining = pos.remaining - 1
        if remaining > 0:
            agent.position = EdgePos(pos.source, pos.target, remaining, pos.total)
            continue
        queue_key = (pos.target, pos.source)
        ctrl_id = world.controllers_by_node.get(pos.target)
        capacity = None
        if ctrl_id is not None:
            ctrl = world.agents[ctrl_id].controller
            if ctrl is not None:
                capacity = ctrl.capacities.get(pos.source)
        queue = world.queues.setdefault(queue_key, [])
        if capacity is not None and len(queue) >= capacity:
            agent.position = EdgePos(pos.source, pos.target, 0, pos.total)  # blocked; retry next tick
            continue
        queue.append(aid)
        agent.position = QueuePos(pos.target, pos.source)
        world.arrivals += 1
    # Service: one vehicle per stream per tick, green or uncontrolled only.
    for node in graph.sorted_nodes():
        ctrl_id = world.controllers_by_node.get(node)
        ctrl = world.agents[ctrl_id].controller if ctrl_id is not None else None
        for from_node in graph.neighbors(node):
            queue = world.queues.get((node, from_node))
            if not queue:
                continue
            if ctrl is not None and from_node in ctrl.streams:
                if ctrl.streams.index(from_node) not in ctrl.green:
                    continue
            vid = queue.pop(0)
            vehicle = world.agents[vid]
            nbrs = graph.neighbors(node)
            target = nbrs[world.rng.randrange(len(nbrs))]
            ticks = max(1, math.ceil(graph.edge_length(node, target) / vehicle.speed))
            vehicle.position = EdgePos(node, target, ticks, ticks)


def _learning_phase(world: World, agent: AgentInstance, ctrl: ControllerState) -> None:
    learner = ctrl.learner
    assert learner is not None and ctrl.plan is not None
    if learner.spec.reward is not None:
        reward = _eval_number(
            learner.spec.reward, AgentContext(world, agent), world, f"agent:{agent.type_name}: reward"
        )
    else:
        reward = -float(controller_stopped(world, ctrl))
    learner.accumulated += reward
    if ctrl.ticks_in_cycle < ctrl.plan.cycle_length():
        return
    state = tf.discretize_state(_queue_lengths(world, ctrl), learner.spec.bins)
    tf.q_update(learner.table, learner.prev_state, learner.prev_action, learner.accumulated, state, learner.spec)
    learner.updates += 1
    action = tf.select_action(learner.table, state, learner.spec.plans, learner.spec.epsilon, world.rng)
    learner.prev_state = state
    learner.prev_action = action
    learner.accumulated = 0.0
    _controller_set_plan(ctrl, world.model.plan(action))


# ---------------------------------------------------------------------------
# Outputs and runs


def format_value(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise EngineError(f"output value {value!r} is not finite")
        return f"{value:.6g}"
    raise EngineError(f"output value {value!r} is not numeric")


def sample_output(world: World, output: mm.OutputDatasetSpec) -> None:
    ctx = WorldContext(world)
    row: list = [world.tick]
    for series in output.series:
        row.append(_eval(series.value, ctx, world, f"output:{output.name}.series:{series.label}"))
    world.output_rows[output.name].append(row)


@dataclass
class OutputTable:
    name: str
    path: str
    header: list[str]
    rows: list[list]


@dataclass
class RunResult:
    tables: dict[str, OutputTable]
    summary: dict

    def csv_text(self, name: str) -> str:
        table = self.tables[name]
        lines = [",".join(table.header)]
        for row in table.rows:
            lines.append(",".join(format_value(v) for v in row))
        return "\n".join(lines) + "\n"


def run(model: mm.Model, config: RunConfig) -> RunResult:
    """Build the world, advance it max_ticks times, and write one CSV per
    output dataset under the configured output directory."""
    if config.max_ticks < 1:
        raise EngineError("max_ticks must be at least 1")
    world = build_world(model, config)
    for output in model.outputs:
        sample_output(world, output)  # tick 0 row
    for _ in range(config.max_ticks):
        tick(world)
    tables: dict[str, OutputTable] = {}
    for output in model.outputs:
        header = ["tick"] + [s.label for s in output.series]
        tables[output.name] = OutputTable(output.name, output.path, header, world.output_rows[output.name])
    result = RunResult(tables=tables, summary=_summary(world, tables))
    out_dir = Path(config.out_dir)
    os.makedirs(out_dir, exist_ok=True)
    for table in tables.values():
        target = out_dir / table.path
        os.makedirs(target.parent, exist_ok=True)
        with open(target, "w", encoding="utf-8", newline="") as handle:
            handle.write(result.csv_text(table.name))
    return result


def _summary(world: World, tables: dict[str, OutputTable]) -> dict:
    final: dict[str, dict[str, object]] = {}
    for name, table in tables.items():
        if table.rows:
            final[name] = dict(zip(table.header, table.rows[-1]))
    population: dict[str, int] = {}
    for agent in world.agents.values():
        population[agent.type_name] = population.get(agent.type_name, 0) + 1
    return {
        "ticks": world.tick,
        "population": population,
        "created": dict(world.created),
        "dead": dict(world.dead),
        "deaths_by_disease": dict(world.deaths_by_disease),
        "ever_infected": dict(world.ever_infected),
        "arrivals": world.arrivals,
        "final": final,
    }

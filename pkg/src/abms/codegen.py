"""NetLogo source emitter.

Transforms a validated model into NetLogo procedure text plus a generation
report mapping every model element to the procedures it produced.  Output is
a pure function of the model: same model, same bytes.  Generated code is
verified structurally (:func:`check_structure` and golden files); semantic
fidelity is anchored by the native engine, which implements the same
behavior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import disease as dz
from . import expr as ex
from . import metamodel as mm
from . import statemachine as sm
from . import traffic as tf


@dataclass
class GenerationReport:
    """Element path -> emitted procedure names, plus breeds and unsupported notes."""

    procedures: dict[str, list[str]] = field(default_factory=dict)
    breeds: dict[str, tuple[str, str]] = field(default_factory=dict)
    unsupported: list[tuple[str, str]] = field(default_factory=list)

    def all_procedures(self) -> list[str]:
        out: list[str] = []
        for names in self.procedures.values():
            out.extend(names)
        return out

    def to_dict(self) -> dict:
        return {
            "procedures": self.procedures,
            "breeds": {k: list(v) for k, v in self.breeds.items()},
            "unsupported": [list(u) for u in self.unsupported],
        }


def _nl_name(name: str) -> str:
    return name.lower().replace("_", "-")


def _breed_names(type_name: str) -> tuple[str, str]:
    base = _nl_name(type_name)
    return (f"{base}s", f"one-{base}")


def _nl_number(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def _nl_expr(expr_: ex.Expr, model: mm.Model) -> str:
    """NetLogo rendition of an expression (reporter context)."""
    if isinstance(expr_, ex.Literal):
        if expr_.kind in (ex.TEXT, ex.IDENTIFIER):
            return '"' + str(expr_.value).replace('"', '\\"') + '"'
        return _nl_number(expr_.value)
    if isinstance(expr_, ex.AttrRef):
        if expr_.owner is None and expr_.name == "tick":
            return "ticks"
        if expr_.owner is None and expr_.name == "stopped":
            return "stopped-here"
        return _nl_name(expr_.name)
    if isinstance(expr_, ex.StateTest):
        return f'{_nl_name(expr_.machine)}-state = "{expr_.state}"'
    if isinstance(expr_, ex.Aggregate):
        plural, _ = _breed_names(expr_.population)
        agentset = plural
        if expr_.predicate is not None:
            agentset = f"{plural} with [{_nl_expr(expr_.predicate, model)}]"
        if expr_.func == "count":
            return f"count {agentset}"
        return f"sum [{_nl_expr(expr_.value, model)}] of ({agentset})"
    if isinstance(expr_, ex.Unary):
        if expr_.op == "not":
            return f"not ({_nl_expr(expr_.operand, model)})"
        return f"(- {_nl_expr(expr_.operand, model)})"
    if isinstance(expr_, ex.Binary):
        op = {"==": "=", "and": "and", "or": "or"}.get(expr_.op, expr_.op)
        return f"({_nl_expr(expr_.left, model)} {op} {_nl_expr(expr_.right, model)})"
    raise TypeError(f"cannot emit {type(expr_).__name__}")


class _Emitter:
    def __init__(self) -> None:
        self.lines: list[str] = []

    def raw(self, text: str = "") -> None:
        self.lines.append(text)

    def proc(self, name: str, body: list[str], report_to: list[str] | None = None, reporter: bool = False) -> str:
        self.raw(("to-report " if reporter else "to ") + name)
        for line in body:
            self.raw("  " + line if line else "")
        self.raw("end")
        self.raw()
        if report_to is not None:
            report_to.append(name)
        return name

    def text(self) -> str:
        return "\n".join(self.lines).rstrip("\n") + "\n"


def generate(model: mm.Model) -> tuple[str, GenerationReport]:
    """Emit NetLogo source text and the generation report for ``model``."""
    report = GenerationReport()
    e = _Emitter()
    e.raw(f"; NetLogo source generated from model '{model.name}'")
    e.raw("; sections: globals, breeds, setup, go, capability procedures, outputs")
    e.raw()
    _emit_globals(e, model)
    _emit_breeds(e, model, report)
    _emit_setup(e, model, report)
    _emit_go(e, model, report)
    for agent in model.agent_types:
        _emit_agent_procs(e, model, agent, report)
    for spec in model.diseases:
        _emit_disease_procs(e, model, spec, report)
    for i, intro in enumerate(model.introductions):
        _emit_introduction(e, model, intro, i, report)
    for machine in model.machines:
        _emit_machine(e, model, machine, f"machine:{machine.name}", report)
    for plan in model.plans:
        _emit_plan(e, model, plan, report)
    for output in model.outputs:
        _emit_output(e, model, output, report)
    for concern in model.concerns:
        report.procedures.setdefault(f"concern:{concern.name}", [])
    return e.text(), report


def _emit_globals(e: _Emitter, model: mm.Model) -> None:
    names = ["sim-max-ticks"]
    for spec in model.diseases:
        names.append(f"{_nl_name(spec.name)}-deaths")
        names.append(f"{_nl_name(spec.name)}-ever-infected")
    for output in model.outputs:
        names.append(f"output-{_nl_name(output.name)}-file")
    e.raw("globals [")
    for name in names:
        e.raw(f"  {name}")
    e.raw("]")
    e.raw()


def _own_vars(model: mm.Model, type_name: str) -> list[str]:
    out: list[str] = []
    agent = model.agent_type(type_name)
    entity = model.entity_type(type_name)
    attrs = agent.attributes if agent else (entity.attributes if entity else [])
    out.extend(_nl_name(a.name) for a in attrs)
    if agent is not None:
        for cap in agent.capabilities:
            if cap.kind == "disease" and cap.target:
                out.append(f"{_nl_name(cap.target)}-state")
                out.append(f"{_nl_name(cap.target)}-dwell")
            elif cap.kind == "state_machine" and cap.target:
                out.append(f"{_nl_name(cap.target)}-state")
                out.append(f"{_nl_name(cap.target)}-dwell")
            elif cap.kind == "flow_control":
                out.append("phase-index")
                out.append("phase-clock")
                out.append("green-streams")
            elif cap.kind == "reinforcement_learning":
                out.append("q-table")
                out.append("q-prev-state")
                out.append("q-prev-action")
                out.append("q-reward-acc")
    return out


def _emit_breeds(e: _Emitter, model: mm.Model, report: GenerationReport) -> None:
    for type_name in [a.name for a in model.agent_types] + [t.name for t in model.entity_types]:
        plural, singular = _breed_names(type_name)
        report.breeds[type_name] = (plural, singular)
        e.raw(f"breed [{plural} {singular}]")
    e.raw()
    for type_name in report.breeds:
        own = _own_vars(model, type_name)
        if own:
            plural, _ = _breed_names(type_name)
            e.raw(f"{plural}-own [ {' '.join(own)} ]")
    e.raw()


def _emit_setup(e: _Emitter, model: mm.Model, report: GenerationReport) -> None:
    body = ["clear-all"]
    topo = model.environment.topology if model.environment else None
    if isinstance(topo, mm.GridTopology):
        body.append(f"resize-world 0 {topo.width - 1} 0 {topo.height - 1}")
        if not topo.wrap:
            body.append("; wrapping off: configure world topology to box in the interface")
    elif isinstance(topo, mm.CartesianTopology):
        body.append(f"; cartesian space x in {topo.x_min:g}..{topo.x_max:g}, y in {topo.y_min:g}..{topo.y_max:g}")
    elif isinstance(topo, mm.GraphTopology):
        body.append("setup-road-network")
    for spec in model.diseases:
        body.append(f"set {_nl_name(spec.name)}-deaths 0")
        body.append(f"set {_nl_name(spec.name)}-ever-infected 0")
    for agent in model.entity_types:
        body.append(f"setup-{_nl_name(agent.name)}s")
    for agent in model.agent_types:
        body.append(f"setup-{_nl_name(agent.name)}s")
    for i, intro in enumerate(model.introductions):
        body.append(f"introduce-{_nl_name(intro.disease)}-{i}")
    if model.outputs:
        body.append("setup-outputs")
    body.append("reset-ticks")
    e.proc("setup", body, report.procedures.setdefault("model", []))
    if isinstance(topo, mm.GraphTopology):
        source = topo.source
        origin = source.path if isinstance(source, mm.OsmGraphStrategy) else "inline edge list"
        e.proc(
            "setup-road-network",
            [f"; build road graph nodes and links from {origin}",
             "; nodes become stationary junction turtles, links carry a length attribute"],
            report.procedures.setdefault("environment", []),
        )


def _emit_go(e: _Emitter, model: mm.Model, report: GenerationReport) -> None:
    body = ["if ticks >= sim-max-ticks [ stop ]"]
    for i, intro in enumerate(model.introductions):
        if intro.periodicity == "periodic":
            body.append(f"if ticks mod {intro.interval} = 0 [ introduce-{_nl_name(intro.disease)}-{i} ]")
    for agent in model.agent_types:
        plural, _ = _breed_names(agent.name)
        if agent.capability("mobility") is not None:
            body.append(f"ask {plural} [ move-{_nl_name(agent.name)} ]")
        if agent.capability("flow_control") is not None:
            body.append(f"ask {plural} [ advance-plan-{_nl_name(agent.name)} ]")
        for cap in agent.capabilities:
            if cap.kind == "state_machine" and cap.target and model.machine(cap.target) is not None:
                body.append(f"ask {plural} [ step-machine-{_nl_name(cap.target)} ]")
    for spec in model.diseases:
        body.append(f"disease-phase-{_nl_name(spec.name)}")
    if any(a.capability("mobility") is not None for a in model.agent_types) and isinstance(
        model.environment.topology if model.environment else None, mm.GraphTopology
    ):
        body.append("vehicle-phase")
    for agent in model.agent_types:
        if agent.capability("reinforcement_learning") is not None:
            plural, _ = _breed_names(agent.name)
            body.append(f"ask {plural} [ learning-step-{_nl_name(agent.name)} ]")
    if model.outputs:
        body.append("sample-outputs")
    body.append("tick")
    e.proc("go", body, report.procedures.setdefault("model", []))
    if isinstance(model.environment.topology if model.environment else None, mm.GraphTopology):
        if any(a.capability("mobility") is not None for a in model.agent_types):
            e.proc(
                "vehicle-phase",
                ["; advance vehicles along links, enqueue at junctions,",
                 "; then serve one vehicle per green stream"],
                report.procedures.setdefault("environment", []),
            )


def _emit_agent_procs(e: _Emitter, model: mm.Model, agent: mm.AgentTypeSpec, report: GenerationReport) -> None:
    path = f"agent:{agent.name}"
    procs = report.procedures.setdefault(path, [])
    plural, _ = _breed_names(agent.name)
    name = _nl_name(agent.name)
    creation = agent.creation
    init: list[str] = []
    for attr in agent.attributes:
        if attr.default is not None:
            init.append(f"set {_nl_name(attr.name)} {_nl_expr(attr.default, model)}")
    for cap in agent.capabilities:
        if cap.kind == "disease" and cap.target:
            spec = model.disease(cap.target)
            entry = dz.entry_compartment(spec) if spec else "S"
            init.append(f'set {_nl_name(cap.target)}-state "{entry}"')
            init.append(f"set {_nl_name(cap.target)}-dwell 0")
        elif cap.kind == "state_machine" and cap.target and model.machine(cap.target) is not None:
            machine = model.machine(cap.target)
            init.append(f'set {_nl_name(cap.target)}-state "{machine.initial}"')
            init.append(f"set {_nl_name(cap.target)}-dwell 0")
    body: list[str] = []
    if isinstance(creation, mm.FixedCountStrategy):
        body.append(f"create-{plural} {creation.count} [")
        if creation.placement is None:
            body.append("  setxy random-xcor random-ycor")
        else:
            spots = " ".join(f"({_nl_expr(x, model)}, {_nl_expr(y, model)})" for x, y in creation.placement)
            body.append(f"  ; place cycling through fixed positions {spots}")
        body.extend("  " + line for line in init)
        body.append("]")
    elif isinstance(creation, mm.GisPointsStrategy):
        body.append(f'file-open "{creation.path}"')
        body.append("while [not file-at-end?] [")
        body.append("  let row file-read-line")
        body.append(f"  create-{plural} 1 [")
        body.append("    ; parse x,y[,attr=value...] from row and setxy accordingly")
        body.extend("    " + line for line in init)
        body.append("  ]")
        body.append("]")
        body.append("file-close")
    elif isinstance(creation, mm.OsmGraphStrategy):
        body.append("; one controller per junction with degree >= 3")
        body.append(f"create-{plural} count-intersections [")
        body.extend("  " + line for line in init)
        body.append("]")
    else:
        body.append(f"create-{plural} 0 [")
        body.extend("  " + line for line in init)
        body.append("]")
    e.proc(f"setup-{name}s", body, procs)
    if isinstance(creation, mm.OsmGraphStrategy):
        e.proc(
            "count-intersections",
            ["; junction nodes of the road network with degree >= 3",
             "report 0"],
            procs,
            reporter=True,
        )
    mobility = agent.capability("mobility")
    on_graph = isinstance(model.environment.topology if model.environment else None, mm.GraphTopology)
    if mobility is not None and on_graph:
        step = _nl_expr(mobility.parameters["step"], model)
        e.proc(
            f"move-{name}",
            [f"; traverse the current link at {step} length units per tick;",
             "; queue at the junction and cross only on green (see vehicle-phase)"],
            procs,
        )
    elif mobility is not None:
        step = _nl_expr(mobility.parameters["step"], model)
        e.proc(
            f"move-{name}",
            ["; random walk: 8 neighbors plus stay, equal odds",
             "let pick random 9",
             "if pick < 8 [",
             "  set heading pick * 45",
             f"  fd {step}",
             "]"],
            procs,
        )
    flow = agent.capability("flow_control")
    if flow is not None:
        plan_cap = agent.capability("state_machine")
        learning = agent.capability("reinforcement_learning")
        active = "q-prev-action" if learning is not None else (
            f'"{plan_cap.target}"' if plan_cap is not None and model.plan(plan_cap.target or "") else '""'
        )
        e.proc(
            f"advance-plan-{name}",
            [f"let active-plan {active}",
             "set phase-clock phase-clock + 1",
             "; move to the next phase once the current duration elapses",
             "; and recolor this junction's incoming streams"],
            procs,
        )
        e.proc(
            "stopped-here",
            ["; vehicles queued on this controller's red streams",
             "report 0"],
            procs,
            reporter=True,
        )
    learning = agent.capability("reinforcement_learning")
    if learning is not None and learning.qlearning is not None:
        q = learning.qlearning
        reward = _nl_expr(q.reward, model) if q.reward is not None else "(- stopped-here)"
        e.proc(
            f"learning-step-{name}",
            [f"set q-reward-acc q-reward-acc + {reward}",
             "; on cycle completion: q-update with "
             f"alpha {_nl_number(q.alpha)} gamma {_nl_number(q.gamma)}, then",
             f"; epsilon-greedy ({_nl_number(q.epsilon)}) selection over {' '.join(q.plans)}"],
            procs,
        )
        e.proc(
            f"q-update-{name}",
            ["; Q(s,a) <- Q(s,a) + alpha * (r + gamma * max Q(s',a') - Q(s,a))",
             "; q-table is a list of [state action value] triples"],
            procs,
        )
        e.proc(
            f"q-select-{name}",
            ["; epsilon-greedy over the configured plans; ties to first declared",
             "report q-prev-action"],
            procs,
            reporter=True,
        )
    for i, cap in enumerate(agent.capabilities):
        if cap.kind == "external":
            library = cap.parameters.get("library")
            lib = library.value if isinstance(library, ex.Literal) else "?"
            e.raw(f"; external capability: {cap.target} (include manually from {lib})")
            e.raw()
            report.unsupported.append((f"{path}.capability[{i}]", f"external capability {cap.target}"))


def _emit_disease_procs(e: _Emitter, model: mm.Model, spec: dz.DiseaseModelSpec, report: GenerationReport) -> None:
    path = f"disease:{spec.name}"
    procs = report.procedures.setdefault(path, [])
    name = _nl_name(spec.name)
    carriers = [a.name for a in model.carriers(spec.name)]
    carrier_set = "(turtle-set " + " ".join(_breed_names(c)[0] for c in carriers) + ")" if carriers else "no-turtles"
    susceptible = dz.susceptible_compartment(spec)
    t = spec.transmission
    phase_body = [
        f'ask {carrier_set} with [{name}-state = "{susceptible}"] [ attempt-{name}-infection ]',
        f'ask {carrier_set} with [{name}-state != "{susceptible}"] [ progress-{name} ]',
        f"apply-{name}-deaths",
        f"ask {carrier_set} [ recolor-{name} ]",
    ]
    e.proc(f"disease-phase-{name}", phase_body, procs)
    if t is not None:
        radius = _nl_expr(t.distance, model) if t.interaction == dz.PROXIMITY and t.distance is not None else "0"
        infectious = dz.infectious_states(spec)
        states_list = " ".join(f'"{s}"' for s in infectious)
        target = dz.infection_target(spec)
        body = [
            f"let sources (other turtles in-radius {radius}) with [",
            f"  member? {name}-state (list {states_list})",
            "]",
            "ask sources [",
            f"  if [{name}-state] of myself = \"{susceptible}\" and random-float 1.0 < {_nl_expr(t.probability, model)} [",
            f"    ask myself [ become-{name}-infected ]",
            "  ]",
            "]",
        ]
        e.proc(f"attempt-{name}-infection", body, procs)
        e.proc(
            f"become-{name}-infected",
            [f'set {name}-state "{target}"',
             f"set {name}-dwell 0",
             f"set {name}-ever-infected {name}-ever-infected + 1"],
            procs,
        )
    progress_body = [f"set {name}-dwell {name}-dwell + 1"]
    machine = dz.build_machine(spec)
    for tr in machine.transitions:
        if isinstance(tr.trigger, sm.InteractionTrigger) or tr.trigger is None:
            continue
        condition = _trigger_condition(tr.trigger, f"{name}-dwell", model)
        action = f'set {name}-state "{tr.target}" set {name}-dwell 0'
        if tr.abortion is not None:
            action = (
                f"ifelse random-float 1.0 < {_nl_expr(tr.abortion.probability, model)} "
                f'[ set {name}-state "{tr.abortion.abort_to}" ] [ {action} ]'
            )
        progress_body.append(f'if {name}-state = "{tr.source}" and {condition} [ {action} ]')
    for rule in spec.mortality:
        if rule.evaluation == dz.LEAVING_COMPARTMENT:
            continue
        guard = _mortality_guard(rule, model)
        progress_body.append(
            f'if {name}-state = "{rule.compartment}" and {guard} '
            f"and random-float 1.0 < {_nl_expr(rule.rate, model)} "
            f'[ set {name}-state "Dead" ]'
        )
    e.proc(f"progress-{name}", progress_body, procs)
    e.proc(
        f"apply-{name}-deaths",
        [f'let victims {carrier_set} with [{name}-state = "Dead"]',
         f"set {name}-deaths {name}-deaths + count victims",
         "ask victims [ die ]"],
        procs,
    )
    color_lines = []
    palette = {"S": "blue", "E": "yellow", "I": "red", "R": "green", "P": "gray"}
    for comp in dz.compartments_of(spec):
        color = palette.get(comp, "white")
        color_lines.append(f'if {name}-state = "{comp}" [ set color {color} ]')
    e.proc(f"recolor-{name}", color_lines, procs)


def _trigger_condition(trigger: sm.Trigger, dwell_var: str, model: mm.Model) -> str:
    if isinstance(trigger, sm.ProbabilisticTrigger):
        return f"random-float 1.0 < {_nl_expr(trigger.rate, model)}"
    if isinstance(trigger, sm.DeterministicTrigger):
        return f"{dwell_var} >= {_nl_expr(trigger.ticks, model)}"
    if isinstance(trigger, sm.ConditionalTrigger):
        return _nl_expr(trigger.condition, model)
    if isinstance(trigger, sm.CompositeTrigger):
        joiner = " and " if trigger.mode == "all_of" else " or "
        return "(" + joiner.join(_trigger_condition(p, dwell_var, model) for p in trigger.parts) + ")"
    return "false"


def _mortality_guard(rule: dz.MortalitySpec, model: mm.Model) -> str:
    if rule.evaluation == dz.SPECIFIC_TIMEUNIT:
        return f"ticks = {rule.at_tick}"
    if rule.evaluation == dz.WHEN_CONDITION and rule.condition is not None:
        return _nl_expr(rule.condition, model)
    return "true"


def _emit_introduction(e: _Emitter, model: mm.Model, intro: dz.DiseaseIntroductionSpec, index: int, report: GenerationReport) -> None:
    path = f"introduce[{index}]"
    procs = report.procedures.setdefault(path, [])
    spec = model.disease(intro.disease)
    name = _nl_name(intro.disease)
    susceptible = dz.susceptible_compartment(spec) if spec else "S"
    target = dz.infection_target(spec) if spec else "I"
    carriers = [a.name for a in model.carriers(intro.disease)]
    carrier_set = "(turtle-set " + " ".join(_breed_names(c)[0] for c in carriers) + ")" if carriers else "no-turtles"
    body = [f'let pool {carrier_set} with [{name}-state = "{susceptible}"]']
    if intro.selection == "eligible" and intro.eligibility is not None:
        body.append(f"set pool pool with [{_nl_expr(intro.eligibility, model)}]")
    if intro.quantity_kind == "deterministic":
        body.append(f"ask n-of (min (list {intro.count} count pool)) pool [")
    else:
        body.append(f"ask pool with [random-float 1.0 < {_nl_number(intro.probability)}] [")
    body.append(f'  set {name}-state "{target}"')
    body.append(f"  set {name}-dwell 0")
    body.append(f"  set {name}-ever-infected {name}-ever-infected + 1")
    body.append("]")
    e.proc(f"introduce-{name}-{index}", body, procs)


def _emit_machine(e: _Emitter, model: mm.Model, machine: sm.StateMachineSpec, path: str, report: GenerationReport) -> None:
    procs = report.procedures.setdefault(path, [])
    name = _nl_name(machine.name)
    body = [f"set {name}-dwell {name}-dwell + 1"]
    for tr in machine.transitions:
        if tr.trigger is None or isinstance(tr.trigger, sm.InteractionTrigger):
            continue
        condition = _trigger_condition(tr.trigger, f"{name}-dwell", model)
        if tr.guard is not None:
            condition = f"({_nl_expr(tr.guard, model)}) and {condition}"
        action = f'set {name}-state "{tr.target}" set {name}-dwell 0'
        if tr.abortion is not None:
            action = (
                f"ifelse random-float 1.0 < {_nl_expr(tr.abortion.probability, model)} "
                f'[ set {name}-state "{tr.abortion.abort_to}" ] [ {action} ]'
            )
        body.append(f'if {name}-state = "{tr.source}" and {condition} [ {action} ]')
    e.proc(f"step-machine-{name}", body, procs)


def _emit_plan(e: _Emitter, model: mm.Model, plan: tf.PlanSpec, report: GenerationReport) -> None:
    procs = report.procedures.setdefault(f"plan:{plan.name}", [])
    name = _nl_name(plan.name)
    body = [f"; {len(plan.phases)} phases, cycle length {plan.cycle_length()} ticks"]
    for i, phase in enumerate(plan.phases):
        streams = " ".join(phase.green)
        body.append(f"; phase {i} '{phase.name}': green {streams} for {phase.duration} ticks")
    body.append("set phase-clock phase-clock + 1")
    e.proc(f"cycle-plan-{name}", body, procs)


def _emit_output(e: _Emitter, model: mm.Model, output: mm.OutputDatasetSpec, report: GenerationReport) -> None:
    path = f"output:{output.name}"
    procs = report.procedures.setdefault(path, [])
    name = _nl_name(output.name)
    labels = ",".join(["tick"] + [s.label for s in output.series])
    setup_body = [
        f'set output-{name}-file "{output.path}"',
        f"carefully [ file-delete output-{name}-file ] []",
        f"file-open output-{name}-file",
        f'file-print "{labels}"',
        "file-close",
    ]
    e.proc(f"setup-output-{name}", setup_body, procs)
    sample_body = [
        f"if ticks mod {output.interval} != 0 [ stop ]",
        f"file-open output-{name}-file",
        "file-print (word ticks",
    ]
    for series in output.series:
        sample_body.append(f'  "," {_nl_expr(series.value, model)}')
    sample_body.append(")")
    sample_body.append("file-close")
    e.proc(f"sample-output-{name}", sample_body, procs)
    if "model-outputs" not in report.procedures:
        report.procedures["model-outputs"] = []
    if not any("setup-outputs" in names for names in report.procedures.values()):
        setup_all = [f"setup-output-{_nl_name(o.name)}" for o in model.outputs]
        e.proc("setup-outputs", setup_all, report.procedures["model-outputs"])
        sample_all = [f"sample-output-{_nl_name(o.name)}" for o in model.outputs]
        e.proc("sample-outputs", sample_all, report.procedures["model-outputs"])


def check_structure(source: str, report: GenerationReport) -> bool:
    """True iff every reported procedure and breed appears exactly once and
    brackets and parentheses balance (comments and strings ignored)."""
    stripped_lines: list[str] = []
    for line in source.split("\n"):
        out: list[str] = []
        in_string = False
        i = 0
        while i < len(line):
            ch = line[i]
            if in_string:
                if ch == "\\" and i + 1 < len(line):
                    i += 2
                    continue
                if ch == '"':
                    in_string = False
                i += 1
                continue
            if ch == '"':
                in_string = True
                i += 1
                continue
            if ch == ";":
                break
            out.append(ch)
            i += 1
        stripped_lines.append("".join(out))
    stripped = "\n".join(stripped_lines)
    for name in report.all_procedures():
        count = 0
        for line in stripped_lines:
            words = line.strip().split()
            if len(words) >= 2 and words[0] in ("to", "to-report") and words[1] == name:
                count += 1
        if count != 1:
            return False
    for plural, singular in report.breeds.values():
        if stripped.count(f"breed [{plural} {singular}]") != 1:
            return False
    depth = {"[": 0, "(": 0}
    pair = {"]": "[", ")": "("}
    for ch in stripped:
        if ch in depth:
            depth[ch] += 1
        elif ch in pair:
            depth[pair[ch]] -= 1
            if depth[pair[ch]] < 0:
                return False
    return depth["["] == 0 and depth["("] == 0

from pathlib import Path

import pytest

from abms import engine
from abms import expr as ex
from abms import metamodel as mm
from abms.dsl import parse_model
from abms.errors import EngineError, FileFormatError
from abms.ingest import load_gis_points, load_osm_graph

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

MINI_OSM = """<?xml version="1.0"?>
<osm>
  <node id="1" lat="0.0" lon="0.0"/>
  <node id="2" lat="0.0" lon="0.001"/>
  <node id="3" lat="0.0" lon="0.002"/>
  <way id="9"><nd ref="1"/><nd ref="2"/><nd ref="3"/><tag k="highway" v="residential"/></way>
</osm>
"""

CROSS_OSM = """<?xml version="1.0"?>
<osm>
  <node id="1" lat="0.001" lon="0.001"/>
  <node id="2" lat="-0.001" lon="0.001"/>
  <node id="3" lat="0.0" lon="0.0"/>
  <node id="4" lat="0.0" lon="0.001"/>
  <way id="10"><nd ref="1"/><nd ref="4"/><nd ref="2"/><tag k="highway" v="primary"/></way>
  <way id="11"><nd ref="3"/><nd ref="4"/><tag k="highway" v="primary"/></way>
</osm>
"""


def grid_model(body: str, width=10, height=10, wrap=True) -> mm.Model:
    wrap_kw = " wrap" if wrap else ""
    return parse_model(
        f"model t {{\n  environment grid width {width} height {height}{wrap_kw}\n{body}\n}}\n"
    )


def cfg(tmp_path, **kw):
    base = dict(seed=42, max_ticks=10, out_dir=tmp_path, base_dir=tmp_path)
    base.update(kw)
    return engine.RunConfig(**base)


class TestBuildWorld:
    def test_fixed_count_random_on_grid(self, tmp_path):
        model = parse_model(
            "model t {\n  environment grid width 50 height 50\n"
            "  agent A { create fixed 30 random }\n}\n"
        )
        world = engine.build_world(model, cfg(tmp_path))
        assert len(world.agents) == 30
        for agent in world.agents.values():
            x, y = agent.position
            assert 0 <= x < 50 and 0 <= y < 50

    def test_gis_points_fixture_places_each_point(self, tmp_path):
        model = parse_model(
            'model t {\n  environment grid width 25 height 25\n'
            '  agent A { create gis "natives.points" }\n}\n'
        )
        world = engine.build_world(model, cfg(tmp_path, base_dir=FIXTURES))
        points = load_gis_points(FIXTURES / "natives.points")
        assert len(world.agents) == len(points) == 12
        got = sorted(a.position for a in world.agents.values())
        want = sorted((int(round(p.x)), int(round(p.y))) for p in points)
        assert got == want

    def test_osm_intersections_get_one_controller(self, tmp_path):
        (tmp_path / "cross.osm").write_text(CROSS_OSM)
        model = parse_model(
            'model t {\n  environment graph from osm "cross.osm"\n'
            '  agent C {\n    create osm "cross.osm"\n    capability flow_control streams auto\n'
            '    capability state_machine P\n  }\n'
            "  plan P {\n    phase p green s0 s1 s2 duration 3\n  }\n}\n"
        )
        world = engine.build_world(model, cfg(tmp_path))
        assert len(world.graph.nodes) == 4
        assert len(world.agents) == 1
        controller = next(iter(world.agents.values()))
        assert controller.controller is not None
        assert controller.controller.node == "4"
        assert controller.controller.streams == ["1", "2", "3"]

    def test_gis_point_outside_bounds_is_an_error(self, tmp_path):
        (tmp_path / "far.points").write_text("99.0,99.0\n")
        model = parse_model(
            'model t {\n  environment grid width 10 height 10\n'
            '  agent A { create gis "far.points" }\n}\n'
        )
        with pytest.raises(EngineError, match="outside"):
            engine.build_world(model, cfg(tmp_path))

    def test_missing_point_file(self, tmp_path):
        model = parse_model(
            'model t {\n  environment grid width 10 height 10\n'
            '  agent A { create gis "nope.points" }\n}\n'
        )
        with pytest.raises(FileFormatError, match="not found"):
            engine.build_world(model, cfg(tmp_path))

    def test_external_capability_requires_library_file(self, tmp_path):
        model = parse_model(
            'model t {\n  environment grid width 5 height 5\n'
            '  agent A {\n    create fixed 1 random\n'
            '    capability external "helper.nls" boost\n  }\n}\n'
        )
        with pytest.raises(EngineError, match="helper.nls"):
            engine.build_world(model, cfg(tmp_path))
        (tmp_path / "helper.nls").write_text("; helper\n")
        world = engine.build_world(model, cfg(tmp_path))
        assert len(world.agents) == 1

    def test_placement_positions_cycle(self, tmp_path):
        model = grid_model("  agent A { create fixed 5 at (1, 2) (3, 4) }")
        world = engine.build_world(model, cfg(tmp_path))
        positions = [a.position for a in world.agents.values()]
        assert positions == [(1, 2), (3, 4), (1, 2), (3, 4), (1, 2)]

    def test_attribute_defaults_and_gis_overrides(self, tmp_path):
        (tmp_path / "p.points").write_text("1.0,1.0,age=30\n2.0,2.0\n")
        model = parse_model(
            'model t {\n  environment grid width 10 height 10\n'
            '  agent A {\n    create gis "p.points"\n    attr age integer = 7\n'
            "    attr older boolean = age > 10\n  }\n}\n"
        )
        world = engine.build_world(model, cfg(tmp_path))
        by_pos = {a.position: a for a in world.agents.values()}
        assert by_pos[(1, 1)].attrs == {"age": 30, "older": True}
        assert by_pos[(2, 2)].attrs == {"age": 7, "older": False}

    def test_aperiodic_introduction_applies_at_build(self, tmp_path):
        model = grid_model(
            "  agent A {\n    create fixed 10 random\n    capability disease d\n  }\n"
            "  disease d model SIR {\n    transmission contact probability 0\n"
            "    duration I deterministic 5\n  }\n"
            "  introduce d deterministic 4 arbitrary aperiodic"
        )
        world = engine.build_world(model, cfg(tmp_path))
        infected = [a for a in world.agents.values() if a.diseases["d"].current == "I"]
        assert len(infected) == 4
        assert world.ever_infected["d"] == 4


class TestLoaders:
    def test_two_points(self, tmp_path):
        (tmp_path / "p.points").write_text("1.0,2.0\n3.5,4.5\n")
        points = load_gis_points(tmp_path / "p.points")
        assert [(p.x, p.y) for p in points] == [(1.0, 2.0), (3.5, 4.5)]

    def test_empty_file(self, tmp_path):
        (tmp_path / "p.points").write_text("")
        assert load_gis_points(tmp_path / "p.points") == []

    def test_malformed_line_reports_position(self, tmp_path):
        (tmp_path / "p.points").write_text("a,b\n")
        with pytest.raises(FileFormatError, match="line 1: expected number"):
            load_gis_points(tmp_path / "p.points")

    def test_osm_three_nodes_one_way(self, tmp_path):
        (tmp_path / "m.osm").write_text(MINI_OSM)
        graph = load_osm_graph(tmp_path / "m.osm")
        assert len(graph.nodes) == 3
        assert len(graph.edges) == 2
        # consecutive nodes are 0.001 degrees of longitude apart at the equator
        assert graph.edge_length("1", "2") == pytest.approx(111.19, rel=0.01)

    def test_osm_unknown_node_reference(self, tmp_path):
        (tmp_path / "m.osm").write_text(MINI_OSM.replace('<nd ref="3"/>', '<nd ref="99"/>'))
        with pytest.raises(FileFormatError, match="99"):
            load_osm_graph(tmp_path / "m.osm")

    def test_osm_non_highway_ways_ignored(self, tmp_path):
        (tmp_path / "m.osm").write_text(MINI_OSM.replace('k="highway"', 'k="waterway"'))
        graph = load_osm_graph(tmp_path / "m.osm")
        assert len(graph.nodes) == 3
        assert len(graph.edges) == 0

    def test_osm_malformed_xml(self, tmp_path):
        (tmp_path / "m.osm").write_text("<osm><node id=")
        with pytest.raises(FileFormatError, match="malformed XML"):
            load_osm_graph(tmp_path / "m.osm")


class TestNeighbors:
    def build(self, tmp_path, positions, wrap=True, width=10, height=10):
        spots = " ".join(f"({x}, {y})" for x, y in positions)
        model = grid_model(
            f"  agent A {{ create fixed {len(positions)} at {spots} }}",
            width=width,
            height=height,
            wrap=wrap,
        )
        return engine.build_world(model, cfg(tmp_path))

    def test_torus_wraps_distance(self, tmp_path):
        world = self.build(tmp_path, [(0, 0), (9, 0)])
        ids = sorted(world.agents)
        assert engine.neighbors_within(world, world.agents[ids[0]].position, 1, exclude=ids[0]) == [ids[1]]

    def test_no_wrap_distance(self, tmp_path):
        world = self.build(tmp_path, [(0, 0), (9, 0)], wrap=False)
        ids = sorted(world.agents)
        assert engine.neighbors_within(world, world.agents[ids[0]].position, 1, exclude=ids[0]) == []

    def test_radius_zero_means_contact(self, tmp_path):
        world = self.build(tmp_path, [(3, 3), (3, 3), (3, 4)])
        ids = sorted(world.agents)
        got = engine.neighbors_within(world, world.agents[ids[0]].position, 0, exclude=ids[0])
        assert got == [ids[1]]

    def test_empty_world(self, tmp_path):
        world = self.build(tmp_path, [(1, 1)])
        only = next(iter(world.agents))
        assert engine.neighbors_within(world, (5, 5), 2, exclude=only) == []

    def test_ascending_id_order(self, tmp_path):
        world = self.build(tmp_path, [(5, 5), (5, 6), (5, 4), (6, 5)])
        ids = sorted(world.agents)
        got = engine.neighbors_within(world, world.agents[ids[0]].position, 1.5, exclude=ids[0])
        assert got == sorted(got)
        assert got == ids[1:]


class TestMobility:
    def test_step_zero_stays(self, tmp_path):
        model = grid_model("  agent A {\n    create fixed 1 at (4, 4)\n    capability mobility random_walk step 0\n  }")
        world = engine.build_world(model, cfg(tmp_path))
        for _ in range(5):
            engine.tick(world)
        assert next(iter(world.agents.values())).position == (4, 4)

    def test_grid_step_reaches_only_nine_cells(self, tmp_path):
        model = grid_model("  agent A {\n    create fixed 1 at (4, 4)\n    capability mobility random_walk step 1\n  }")
        world = engine.build_world(model, cfg(tmp_path))
        agent = next(iter(world.agents.values()))
        allowed = {(4 + dx, 4 + dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)}
        seen = set()
        for _ in range(1000):
            agent.position = (4, 4)
            new_pos = engine.mobility_step(world, agent, ex.lit(1), world.rng)
            assert new_pos in allowed
            seen.add(new_pos)
        assert seen == allowed

    def test_cartesian_clamps_at_bounds(self, tmp_path):
        model = parse_model(
            "model t {\n  environment cartesian 0..10 0..10\n"
            "  agent A {\n    create fixed 1 at (10, 10)\n    capability mobility random_walk step 1\n  }\n}\n"
        )
        world = engine.build_world(model, cfg(tmp_path))
        agent = next(iter(world.agents.values()))
        for _ in range(50):
            x, y = engine.mobility_step(world, agent, ex.lit(1), world.rng)
            assert 0 <= x <= 10 and 0 <= y <= 10
            agent.position = (x, y)


class TestTick:
    def test_empty_world_counts_up_and_samples_zero(self, tmp_path):
        model = grid_model(
            '  agent A { create fixed 0 random }\n'
            '  output o every 1 to "o.csv" {\n    series n count(A)\n  }'
        )
        result = engine.run(model, cfg(tmp_path, max_ticks=3))
        assert result.tables["o"].rows == [[0, 0], [1, 0], [2, 0], [3, 0]]

    def test_determinism_same_seed_same_digests(self, tmp_path):
        model = parse_model((FIXTURES / "measles.abms").read_text())

        def digests(seed):
            world = engine.build_world(model, cfg(tmp_path, seed=seed, base_dir=FIXTURES))
            out = [world.digest()]
            for _ in range(30):
                engine.tick(world)
                out.append(world.digest())
            return out

        assert digests(42) == digests(42)
        assert digests(42) != digests(43)

    def test_stationary_contact_on_distinct_cells_never_spreads(self, tmp_path):
        model = grid_model(
            "  agent A {\n    create fixed 9 at (0, 0) (1, 1) (2, 2) (3, 3) (4, 4) (5, 5) (6, 6) (7, 7) (8, 8)\n"
            "    capability disease d\n  }\n"
            "  disease d model SIR {\n    transmission contact probability 1\n"
            "    duration I deterministic 1000\n  }\n"
            "  introduce d deterministic 1 arbitrary aperiodic"
        )
        world = engine.build_world(model, cfg(tmp_path))
        for _ in range(40):
            engine.tick(world)
        infected = [a for a in world.agents.values() if a.diseases["d"].current == "I"]
        assert len(infected) == 1

    def test_bounds_hold_every_tick(self, tmp_path):
        model = grid_model(
            "  agent A {\n    create fixed 20 random\n    capability mobility random_walk step 1\n  }",
            width=7,
            height=7,
            wrap=False,
        )
        world = engine.build_world(model, cfg(tmp_path))
        for _ in range(50):
            engine.tick(world)
            for agent in world.agents.values():
                x, y = agent.position
                assert 0 <= x < 7 and 0 <= y < 7

    def test_zero_dynamics_without_capabilities(self, tmp_path):
        model = grid_model("  agent A {\n    create fixed 8 random\n    attr age integer = 3\n  }")
        world = engine.build_world(model, cfg(tmp_path))
        def snapshot():
            return {a.id: (a.position, dict(a.attrs)) for a in world.agents.values()}
        before = snapshot()
        for _ in range(20):
            engine.tick(world)
        assert snapshot() == before
        assert world.tick == 20


class TestRun:
    def test_tutorial_row_count_and_header(self, tmp_path):
        model = parse_model((FIXTURES / "measles.abms").read_text())
        engine.run(model, cfg(tmp_path, max_ticks=200, base_dir=FIXTURES))
        lines = (tmp_path / "out.csv").read_text().splitlines()
        assert len(lines) == 202  # header + ticks 0..200
        assert lines[0] == "tick,susceptible,infected,recovered"

    def test_boundary_two_rows(self, tmp_path):
        model = grid_model(
            '  agent A { create fixed 2 random }\n'
            '  output o every 1 to "o.csv" {\n    series n count(A)\n  }'
        )
        result = engine.run(model, cfg(tmp_path, max_ticks=1))
        assert [row[0] for row in result.tables["o"].rows] == [0, 1]

    def test_interval_row_arithmetic(self, tmp_path):
        model = grid_model(
            '  agent A { create fixed 2 random }\n'
            '  output o every 3 to "o.csv" {\n    series n count(A)\n  }'
        )
        result = engine.run(model, cfg(tmp_path, max_ticks=10))
        assert [row[0] for row in result.tables["o"].rows] == [0, 3, 6, 9]
        assert len(result.tables["o"].rows) == 10 // 3 + 1

    def test_zero_transmission_keeps_ever_infected_constant(self, tmp_path):
        model = grid_model(
            "  agent A {\n    create fixed 30 random\n    capability mobility random_walk step 1\n"
            "    capability disease d\n  }\n"
            "  disease d model SIR {\n    transmission contact probability 0\n"
            "    duration I probabilistic rate 0.2\n  }\n"
            "  introduce d deterministic 5 arbitrary aperiodic"
        )
        world = engine.build_world(model, cfg(tmp_path))
        assert world.ever_infected["d"] == 5
        for _ in range(60):
            engine.tick(world)
            assert world.ever_infected["d"] == 5

    def test_conservation_on_fixture_run(self, tmp_path):
        model = parse_model((FIXTURES / "measles.abms").read_text())
        world = engine.build_world(model, cfg(tmp_path, base_dir=FIXTURES))
        created = dict(world.created)
        for _ in range(120):
            engine.tick(world)
            alive = {}
            for agent in world.agents.values():
                alive[agent.type_name] = alive.get(agent.type_name, 0) + 1
            for type_name, n in created.items():
                assert alive.get(type_name, 0) + world.dead.get(type_name, 0) == n

    def test_run_rejects_invalid_model(self, tmp_path):
        model = grid_model("  agent A { create fixed 1 random\n    capability disease ghost\n  }")
        with pytest.raises(EngineError, match="validation"):
            engine.run(model, cfg(tmp_path))


class TestVehicles:
    def traffic_world(self, tmp_path, seed=42, ticks=0):
        model = parse_model((FIXTURES / "traffic.abms").read_text())
        world = engine.build_world(model, cfg(tmp_path, seed=seed, base_dir=FIXTURES))
        for _ in range(ticks):
            engine.tick(world)
        return world

    def test_vehicle_conservation(self, tmp_path):
        world = self.traffic_world(tmp_path)
        for _ in range(80):
            engine.tick(world)
            vehicles = [a for a in world.agents.values() if a.type_name == "Vehicle"]
            assert len(vehicles) == 20
            queued = sum(len(q) for q in world.queues.values())
            in_transit = sum(1 for v in vehicles if isinstance(v.position, engine.EdgePos))
            at_node = sum(1 for v in vehicles if isinstance(v.position, engine.NodePos))
            assert queued + in_transit + at_node == 20

    def test_exactly_one_active_phase_and_green_set(self, tmp_path):
        world = self.traffic_world(tmp_path)
        model = world.model
        plan_names = {p.name for p in model.plans}
        for _ in range(60):
            engine.tick(world)
            for agent in world.agents.values():
                ctrl = agent.controller
                if ctrl is None:
                    continue
                assert ctrl.plan.name in plan_names
                phase = next(p for p in ctrl.plan.phases if p.name == ctrl.machine.current)
                expected = {i for i, sid in enumerate(ctrl.stream_ids) if sid in set(phase.green)}
                assert ctrl.green == expected

    def test_stopped_vehicles_counts_red_queues_only(self, tmp_path):
        world = self.traffic_world(tmp_path, ticks=40)
        for agent in world.agents.values():
            ctrl = agent.controller
            if ctrl is None:
                continue
            expected = sum(
                len(world.queues.get((ctrl.node, frm), []))
                for i, frm in enumerate(ctrl.streams)
                if i not in ctrl.green
            )
            assert engine.controller_stopped(world, ctrl) == expected

    def test_learner_updates_accumulate(self, tmp_path):
        world = self.traffic_world(tmp_path)
        cycle = world.model.plan("MainGreen").cycle_length()
        for _ in range(cycle * 3 + 1):
            engine.tick(world)
        learners = [a.controller.learner for a in world.agents.values() if a.controller]
        assert learners and all(l.updates >= 3 for l in learners)

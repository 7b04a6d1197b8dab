import json

import pytest

from covdrive import DATA_DIR
from covdrive.catalog import AbstractScenario
from covdrive.concretize import ParameterMap, instantiate
from covdrive.simcore import (
    BaselineController,
    TimedTrace,
    controller_from_spec,
    follow_accel,
    run,
    signal_states,
)

from helpers import NoBrake, npc, straight_scenario


def test_identical_traces(straight_map):
    sc = straight_scenario(npcs=[npc("n0", 80, 6.0, **{"yield": True})])
    a = run(sc, BaselineController(), 20.0, straight_map).to_jsonl()
    b = run(sc, BaselineController(), 20.0, straight_map).to_jsonl()
    assert a == b


def test_town_scenario_deterministic(town_catalog, town):
    pmap = ParameterMap.load(DATA_DIR / "town_parameters.json")
    a = AbstractScenario.from_mapping(town_catalog, {"weather": "rainy", "road": "four-way", "ego-action": "left-turn",
                                                     "vehicle-density": "mild", "pedestrian": "crossing"})
    sc = instantiate(a, town, pmap, 11, map_ref="town")
    assert run(sc, BaselineController(), 30, town).to_jsonl() == run(sc, BaselineController(), 30, town).to_jsonl()


def test_stationary_npc_no_brake_collides(straight_map):
    sc = straight_scenario(npcs=[npc("n0", 60, program="stationary")])
    tr = run(sc, NoBrake(), 20.0, straight_map)
    assert tr.termination == "collision"
    assert tr.frames[-1].ego.x + 2.3 >= 60 - 2.3


def test_baseline_stops_behind_stationary(straight_map):
    sc = straight_scenario(npcs=[npc("n0", 100, program="stationary")])
    tr = run(sc, BaselineController(), 30.0, straight_map)
    assert tr.termination == "budget"
    gap = 100 - tr.frames[-1].ego.x - 4.6
    assert gap == pytest.approx(2.5, abs=0.3)


def test_car_following_equilibrium(straight_map):
    v_lead = 6.0
    sc = straight_scenario(start=20, speed=10.0, npcs=[npc("n0", 70, v_lead)])
    tr = run(sc, BaselineController(), 35.0, straight_map)
    last = tr.frames[-1]
    gap = last.agents[1].x - last.ego.x - 4.6
    expected = 2.5 + 1.2 * v_lead  # the law is zero at v = v_lead and gap = s0 + T v
    assert last.ego.speed == pytest.approx(v_lead, abs=0.05)
    assert gap == pytest.approx(expected, abs=0.2)
    assert follow_accel(expected, v_lead, v_lead, 2.5, 1.2, 0.3, 0.8) == pytest.approx(0.0)


def test_red_light_stop(town):
    # a_w backward lanes drive east into signalized junction A
    lane = "a_w_2"
    assert town.junction_ahead(lane) == "A"
    conn = next(c for c in town.connectors_from(lane))
    phases = [{"duration": 100.0, "states": {r: "red" for r, _ in town.junctions["A"].incident}}]
    sc = straight_scenario(lane=lane, start=40.0, dest=20.0, speed=8.0, route=[lane, conn.id, conn.target])
    sc.map_ref = "town"
    sc.signal_program = {"A": {"offset": 0.0, "phases": phases}}
    tr = run(sc, BaselineController(), 30.0, town)
    e = tr.frames[-1].ego
    assert e.speed < 0.05 and e.lane == lane
    standoff = town.stop_station(lane) - (e.offset + e.length / 2)
    assert standoff >= 0.5
    rolling = run(sc, controller_from_spec("baseline:red-light-rolling"), 30.0, town)
    assert rolling.frames[-1].ego.lane != lane


def test_no_right_turn_lane_change_fault(town):
    # ab backward lanes run west into A; a_n lies to the right of that approach
    route_lanes = ["ab_2", "ab_3"]
    assert town.neighbor("ab_2", "right").id == "ab_3"
    conn = next(c for c in town.connectors_from("ab_3") if c.target.startswith("a_n"))
    sc = straight_scenario(lane="ab_2", start=20.0, dest=20.0, speed=6.0, route=route_lanes + [conn.id, conn.target],
                           maneuver=10.0)
    sc.map_ref = "town"
    ok = run(sc, BaselineController(), 40.0, town)
    assert ok.termination == "destination-reached"
    bad = run(sc, controller_from_spec("baseline:no-right-turn-lane-change"), 40.0, town)
    assert bad.termination == "budget"
    assert all(f.ego.lane != "ab_3" for f in bad.frames)


def test_lane_change_completes_smoothly(straight_map):
    sc = straight_scenario(route=["main_0", "main_1"], dest=200.0, maneuver=20.0)
    tr = run(sc, BaselineController(), 40.0, straight_map)
    assert tr.termination == "destination-reached"
    assert max(abs(f.ego.lateral) for f in tr.frames[-30:]) < 0.2


def test_trace_round_trip(straight_map, tmp_path):
    sc = straight_scenario(npcs=[npc("n0", 80, 5.0)])
    tr = run(sc, BaselineController(), 5.0, straight_map)
    p = tmp_path / "t.jsonl"
    p.write_text(tr.to_jsonl())
    back = TimedTrace.load(p)
    assert back.to_jsonl() == tr.to_jsonl()
    assert len(back.frames) == 51 and back.frames[1].t == pytest.approx(0.1)
    header = json.loads(p.read_text().splitlines()[0])
    assert header["agents"][0]["agent_id"] == "ego"


def test_controller_error_ends_run(straight_map):
    class Broken:
        def reset(self, scenario, g):
            pass

        def step(self, obs):
            raise RuntimeError("boom")

    tr = run(straight_scenario(), Broken(), 5.0, straight_map)
    assert tr.termination == "controller-error" and "boom" in tr.error


def test_unknown_lane_rejected(straight_map):
    with pytest.raises(ValueError):
        run(straight_scenario(route=["nope"], lane="nope"), BaselineController(), 1.0, straight_map)


def test_bad_controller_specs():
    with pytest.raises(ValueError):
        controller_from_spec("apollo")
    with pytest.raises(ValueError):
        controller_from_spec("baseline:teleport")


def test_signal_cycle():
    prog = {"J": {"offset": 0.0, "phases": [{"duration": 10, "states": {"r": "green"}},
                                           {"duration": 5, "states": {"r": "red"}}]}}
    assert signal_states(prog, 3.0) == {"J:r": "green"}
    assert signal_states(prog, 12.0) == {"J:r": "red"}
    assert signal_states(prog, 16.0) == {"J:r": "green"}


def test_pedestrian_crosses(town):
    from covdrive.concretize import PedestrianSpec

    sc = straight_scenario(lane="hw_0", start=10, dest=20, speed=0.0)
    sc.map_ref = "town"
    sc.pedestrians = [PedestrianSpec("p0", "B", "b_s", 0, 1.0)]
    tr = run(sc, BaselineController(), 10.0, town)
    p = [f.agent("p0") for f in tr.frames]
    assert p[5].speed == 0.0 and p[-1].speed == pytest.approx(1.4)

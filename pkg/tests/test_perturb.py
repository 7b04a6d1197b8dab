import math

import numpy as np
import pytest

from covdrive.mapbuild import MapBuilder
from covdrive.mapsem import build_map
from covdrive.perturb import (
    P,
    PRIORITY,
    BehavioralPattern,
    NoLegalPlacement,
    ParameterizedScenario,
    Probe,
    SearchConfig,
    TargetedCollisionPoint,
    build_parameterized_scenario,
    extract_behavioral_sequence,
    extract_collision_points,
    meta_search,
    search_parameter,
)
from covdrive.simcore import AgentState, BaselineController, Frame, TimedTrace, controller_from_spec, run

from helpers import npc, straight_scenario

DT = 0.1
L, W = 4.6, 1.9


def lateral_trace(y_of_t, n=120, v=10.0, x0=20.0):
    """Ego at constant speed along +x with centre height y(t); lane from the centre position."""
    frames = []
    for i in range(n):
        t = i * DT
        x = x0 + v * t
        y = y_of_t(t)
        dy = (y_of_t(t + 1e-4) - y_of_t(t - 1e-4)) / 2e-4
        h = math.atan2(dy, v)
        if y > 0:
            lane, lat = "main_2", 1.75 - y
        elif y > -3.5:
            lane, lat = "main_0", y + 1.75
        else:
            lane, lat = "main_1", y + 5.25
        frames.append(Frame(round(t, 9), [AgentState("ego", x, y, h, v, 0.0, L, W, lane, x, lat)]))
    return TimedTrace("t", frames, "destination-reached", DT)


def cosine_shift(y0, y1, t0, t1):
    def y(t):
        if t <= t0:
            return y0
        if t >= t1:
            return y1
        u = (t - t0) / (t1 - t0)
        return y0 + (y1 - y0) * 0.5 * (1 - math.cos(math.pi * u))
    return y


def corner_ys(f):
    return [c[1] for c in f.ego.corners()]


def right_change():
    return lateral_trace(cosine_shift(-1.75, -5.25, 3.0, 7.0))


def test_lane_change_right_sequence(straight_map):
    tr = right_change()
    seq = extract_behavioral_sequence(tr, straight_map)
    assert seq.patterns == ("lane-following", "lane-change-right", "lane-following")
    # oracle: bounding box first touches the separator y=-3.5, then lies wholly in [-7, -3.5]
    touch = next(i for i, f in enumerate(tr.frames) if min(corner_ys(f)) < -3.5)
    inside = next(i for i, f in enumerate(tr.frames) if max(corner_ys(f)) <= -3.5 and min(corner_ys(f)) >= -7.0)
    assert seq.segments[1].start == touch
    assert seq.segments[2].start == inside
    assert seq.segments[0].start == 0 and seq.segments[-1].end == len(tr.frames)
    for a, b in zip(seq.segments, seq.segments[1:]):
        assert a.end == b.start and a.pattern != b.pattern


def test_mirrored_left_change(straight_map):
    tr = lateral_trace(cosine_shift(-5.25, -1.75, 3.0, 7.0))
    assert extract_behavioral_sequence(tr, straight_map).patterns == ("lane-following", "lane-change-left", "lane-following")


def test_encroaching_left_and_back(straight_map):
    up = cosine_shift(-1.75, 1.0, 2.0, 4.0)
    down = cosine_shift(1.0, -1.75, 6.0, 8.0)
    tr = lateral_trace(lambda t: up(t) if t < 5.0 else down(t))
    pats = extract_behavioral_sequence(tr, straight_map).patterns
    assert "encroaching-change-left" in pats
    assert pats[0] == pats[-1] == "lane-following"


def test_single_lane_trace(straight_map):
    seq = extract_behavioral_sequence(lateral_trace(lambda t: -1.75), straight_map)
    assert seq.patterns == ("lane-following",)


def test_missing_annotations(straight_map):
    tr = lateral_trace(lambda t: -1.75, n=5)
    for f in tr.frames:
        f.ego.lane = None
    with pytest.raises(ValueError):
        extract_behavioral_sequence(tr, straight_map)


def test_lane_change_right_points(straight_map):
    tr = right_change()
    seq = extract_behavioral_sequence(tr, straight_map)
    pts = extract_collision_points(seq, tr, straight_map)
    assert [p.pattern for p in pts] == [P.LANE_FOLLOWING, P.LANE_FOLLOWING, P.LANE_CHANGE_RIGHT, P.LANE_FOLLOWING,
                                        P.LANE_FOLLOWING]
    c = pts[2]
    assert c.y == pytest.approx(-3.5, abs=1e-9)  # centre on the separator
    assert c.lane == "main_1"
    seg = seq.segments[c.segment]
    assert seg.start <= c.frame < seg.end
    assert tr.frames[c.frame].ego.y <= -3.5 < tr.frames[c.frame - 1].ego.y
    assert c.t == tr.frames[c.frame].t
    assert len({p.id for p in pts}) == len(pts)


def test_lane_following_thirds(straight_map):
    tr = lateral_trace(lambda t: -1.75, n=91, v=10.0, x0=0.0)  # 90 m
    seq = extract_behavioral_sequence(tr, straight_map)
    pts = extract_collision_points(seq, tr, straight_map)
    assert [p.x for p in pts] == pytest.approx([30.0, 60.0])
    assert [p.t for p in pts] == pytest.approx([3.0, 6.0])


def test_degenerate_change_segment(straight_map):
    from covdrive.perturb import BehavioralSequence, Segment

    tr = lateral_trace(lambda t: -1.75, n=10)
    seq = BehavioralSequence((Segment(P.LANE_FOLLOWING, 0, 4), Segment(P.LANE_CHANGE_RIGHT, 4, 5),
                              Segment(P.LANE_FOLLOWING, 5, 10)))
    c = extract_collision_points(seq, tr, straight_map)[2]
    assert (c.x, c.y, c.frame) == (tr.frames[4].ego.x, tr.frames[4].ego.y, 4)


@pytest.fixture(scope="module")
def limit10():
    return build_map(MapBuilder("s10").road("main", [(0, 0), (400, 0)], fwd=2, bwd=1, speed_limit=10.0).build())


def _point(pattern, x, y, t, lane):
    return TargetedCollisionPoint(x, y, t, 0.0, pattern, 1, int(t / DT), lane, "C")


def test_point_c_domain(limit10):
    base = straight_scenario()
    ps = build_parameterized_scenario(_point(P.LANE_CHANGE_RIGHT, 150.0, -3.5, 5.0, "main_1"), base, 1, limit10)
    assert ps.speed == 10.0 and ps.nominal == 50.0
    assert ps.domain == pytest.approx((40.0, 60.0))
    assert ps.route[0] == "main_1"
    sc = ps.scenario_at(50.0)
    assert sc.npcs[-1].start_offset == pytest.approx(100.0) and sc.npcs[-1].behavior["program"] == "follow-lane"
    with pytest.raises(ValueError):
        ps.scenario_at(61.0)


def test_point_b_brakes(limit10):
    ps = build_parameterized_scenario(_point(P.LANE_FOLLOWING, 120.0, -1.75, 4.0, "main_0"), straight_scenario(), 1, limit10)
    assert ps.behavior["program"] == "follow-lane-then-brake"
    assert ps.route[0] == "main_0"
    lo, hi = ps.domain
    assert 120.0 - hi > 20.0  # the NPC starts ahead of the ego


def test_point_b_stationary_when_no_room(limit10):
    # the ego reaches the point long after the NPC would need to have started behind the ego
    ps = build_parameterized_scenario(_point(P.LANE_FOLLOWING, 40.0, -1.75, 9.0, "main_0"),
                                      straight_scenario(start=20.0), 1, limit10)
    assert ps.behavior["program"] == "stationary" and ps.domain == (0.0, 0.0)


def test_no_right_neighbor(limit10):
    with pytest.raises(NoLegalPlacement):
        build_parameterized_scenario(_point(P.LANE_CHANGE_RIGHT, 150.0, -7.0, 5.0, None), straight_scenario(), 1, limit10)


def test_headroom_required(limit10):
    with pytest.raises(ValueError):
        build_parameterized_scenario(_point(P.LANE_CHANGE_RIGHT, 150.0, -3.5, 5.0, "main_1"), straight_scenario(), 0,
                                     limit10)


def test_spawn_avoids_existing_agents(limit10):
    base = straight_scenario(npcs=[npc("n0", 100.0, 0.0, "stationary", lane="main_1")])
    ps = build_parameterized_scenario(_point(P.LANE_CHANGE_RIGHT, 150.0, -3.5, 5.0, "main_1"), base, 1, limit10)
    lo, hi = ps.domain
    assert lo >= 40.0 and hi <= 60.0
    # start offsets 150 - d must keep 1 m clearance from the parked car at 100
    assert 150.0 - hi >= 100.0 + 4.6 + 1.0 - 1e-9 or 150.0 - lo <= 100.0 - 4.6 - 1.0 + 1e-9


# -- search_parameter against a test double ---------------------------------------


def _double(ps, t_ego, bias, v, window=0.2):
    calls = []

    def probe(d):
        lo, hi = ps.domain
        assert lo - 1e-9 <= d <= hi + 1e-9
        calls.append(d)
        t_npc = (d + bias) / v  # monotone in d
        return Probe(d, t_npc, t_ego, abs(t_npc - t_ego) <= window)

    return probe, calls


def _family(v=10.0, t=5.0, delta=10.0):
    cfg = SearchConfig(delta=delta)
    pt = _point(P.LANE_CHANGE_RIGHT, 0, 0, t, "x")
    return ParameterizedScenario(None, pt, [], 0.0, {}, v, t, (v * t - delta, v * t + delta), "spawn"), cfg


def test_halving_converges_quickly():
    bound = math.ceil(math.log2(2 * 10.0 / 0.25)) + 2
    assert bound == 9
    worst = 0
    for v in (4.0, 6.0, 10.0, 15.0):
        ps, cfg = _family(v=v)
        for bias in np.linspace(-9.5, 9.5, 77):
            probe, calls = _double(ps, 5.0, float(bias), v)
            out = search_parameter(ps, max_iters=50, probe=probe, config=cfg)
            assert out.kind == "violation", (v, bias, calls)
            worst = max(worst, len(calls))
    assert worst <= bound


def test_blocked_npc_exhausts():
    ps, cfg = _family()

    def probe(d):
        return Probe(d, None, 5.0, False)

    out = search_parameter(ps, max_iters=6, probe=probe, config=cfg)
    assert out.kind == "exhausted" and 1 <= len(out.probes) <= 6


def test_new_sequence_outcome():
    ps, cfg = _family()

    def probe(d):
        return Probe(d, 1.0, 5.0, False, ("lane-following", "lane-change-left", "lane-following"))

    out = search_parameter(ps, max_iters=5, known={("lane-following",)}, probe=probe, config=cfg)
    assert out.kind == "new-sequence" and len(out.probes) == 1


def test_max_iters_validated():
    ps, cfg = _family()
    with pytest.raises(ValueError):
        search_parameter(ps, max_iters=0, probe=lambda d: None, config=cfg)


# -- meta search --------------------------------------------------------------------


class Counting:
    def __init__(self, inner):
        self.inner = inner
        self.runs = 0

    def reset(self, scenario, g):
        self.runs += 1
        self.inner.reset(scenario, g)

    def step(self, obs):
        return self.inner.step(obs)


def test_priority_table():
    order = sorted(BehavioralPattern, key=lambda p: PRIORITY[p])
    assert order[0] in (P.ENCROACHING_LEFT, P.ENCROACHING_RIGHT) and order[-1] is P.LANE_FOLLOWING
    assert PRIORITY[P.LANE_CHANGE_RIGHT] < PRIORITY[P.TURN_LEFT] < PRIORITY[P.U_TURN] < PRIORITY[P.LANE_FOLLOWING]


def test_lane_change_point_popped_first(straight_map):
    base = straight_scenario(route=["main_0", "main_1"], dest=200.0, maneuver=20.0)
    st = meta_search(base, BaselineController(), 3, g=straight_map)
    probes = [r for r in st.runs if r.point != "seed"]
    assert probes and probes[0].point == "S0.P2"
    seq = extract_behavioral_sequence(run(base, BaselineController(), 40, straight_map), straight_map)
    assert seq.patterns[1] == "lane-change-right"


@pytest.mark.parametrize("seed", range(6))
def test_budget_and_no_revisit(seed, straight_map):
    rng = np.random.default_rng(seed)
    base = straight_scenario(start=float(rng.uniform(10, 60)), speed=float(rng.uniform(4, 10)),
                             route=["main_0", "main_1"] if seed % 2 else ["main_0"], maneuver=20.0,
                             dest=float(rng.uniform(150, 250)))
    ctrl = Counting(BaselineController())
    budget = int(rng.integers(3, 15))
    st = meta_search(base, ctrl, budget, g=straight_map)
    assert ctrl.runs == st.used <= budget
    assert st.remaining >= 0
    assert len(set(st.visited)) == len(st.visited)
    for r in st.runs:
        if r.d is not None:
            assert r.outcome in ("probe", "violation", "new-sequence", "exhausted")


def test_spawned_scenarios_respect_density(straight_map):
    base = straight_scenario(npcs=[npc("n0", 150.0, 5.0, lane="main_1")])
    base.vehicle_range = (0, 2)
    st = meta_search(base, BaselineController(), 10, g=straight_map, keep_artifacts=True)
    assert st.artifacts
    for sc, _, _ in st.artifacts:
        assert len(sc.npcs) <= 2


def test_no_headroom_skips_everything(straight_map):
    base = straight_scenario()
    base.vehicle_range = (0, 0)
    st = meta_search(base, BaselineController(), 5, g=straight_map)
    assert st.used == 1 and all(r.outcome in ("seed", "no-headroom") for r in st.runs)


def test_late_braking_found(straight_map):
    base = straight_scenario(speed=8.0)
    st = meta_search(base, controller_from_spec("baseline:late-braking"), 50, g=straight_map)
    assert st.safety_critical_found and st.used <= 50


def test_meta_search_deterministic(straight_map):
    base = straight_scenario(route=["main_0", "main_1"], dest=200.0, maneuver=20.0)
    a = meta_search(base, BaselineController(), 8, g=straight_map)
    b = meta_search(base, BaselineController(), 8, g=straight_map)
    assert [r.log_line() for r in a.runs] == [r.log_line() for r in b.runs]


def test_budget_validated(straight_map):
    with pytest.raises(ValueError):
        meta_search(straight_scenario(), BaselineController(), 0, g=straight_map)

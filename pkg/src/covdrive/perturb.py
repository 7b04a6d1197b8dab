"""Local scenario variation by spawning one extra NPC at a targeted collision point.

The ego trace is cut into behavioral patterns; each pattern yields targeted
collision points.  A point becomes a one-parameter scenario family (the NPC's
initial path distance ``d`` to the point) that a step-halving search tunes
so the NPC and the ego arrive together.  A best-first meta search over all
points runs under a fixed simulation budget.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

from .concretize import VEHICLE_LENGTH, VEHICLE_WIDTH, ConcreteScenario, NPCSpec, agent_box, spawn_headroom
from .geometry import box_corners, box_distance
from .kpi import KpiReport, KpiThresholds, evaluate
from .mapsem import MapGraph, relative_direction
from .simcore import LanePath, TimedTrace, resolve_map, run


class BehavioralPattern(str, Enum):
    LANE_FOLLOWING = "lane-following"
    LANE_CHANGE_LEFT = "lane-change-left"
    LANE_CHANGE_RIGHT = "lane-change-right"
    ENCROACHING_LEFT = "encroaching-change-left"
    ENCROACHING_RIGHT = "encroaching-change-right"
    TURN_LEFT = "turn-left"
    TURN_RIGHT = "turn-right"
    U_TURN = "u-turn"


P = BehavioralPattern

# lower rank pops first
PRIORITY: Dict[BehavioralPattern, int] = {
    P.ENCROACHING_LEFT: 0,
    P.ENCROACHING_RIGHT: 0,
    P.LANE_CHANGE_LEFT: 1,
    P.LANE_CHANGE_RIGHT: 1,
    P.TURN_LEFT: 2,
    P.TURN_RIGHT: 2,
    P.U_TURN: 3,
    P.LANE_FOLLOWING: 4,
}

CHANGES = {P.LANE_CHANGE_LEFT, P.LANE_CHANGE_RIGHT, P.ENCROACHING_LEFT, P.ENCROACHING_RIGHT}
TURNS = {P.TURN_LEFT, P.TURN_RIGHT, P.U_TURN}
SPAN_EPS = 1e-6


class NoLegalPlacement(Exception):
    pass


@dataclass(frozen=True)
class Segment:
    pattern: BehavioralPattern
    start: int  # first frame index
    end: int  # one past the last frame index


@dataclass(frozen=True)
class BehavioralSequence:
    segments: Tuple[Segment, ...]

    @property
    def patterns(self) -> Tuple[str, ...]:
        return tuple(s.pattern.value for s in self.segments)

    def __str__(self) -> str:
        return "<" + ", ".join(self.patterns) + ">"


@dataclass(frozen=True)
class TargetedCollisionPoint:
    x: float
    y: float
    t: float
    heading: float
    pattern: BehavioralPattern
    segment: int
    frame: int
    lane: Optional[str]  # lane the spawned NPC should use to reach the point
    id: str = ""

    @property
    def rank(self) -> int:
        return PRIORITY[self.pattern]


# -- behavioral sequence --------------------------------------------------------------


def _travel_sign(road, x: float, y: float, heading: float) -> float:
    s, _ = road.centerline.project(x, y)
    h = road.centerline.heading_at(s)
    return 1.0 if math.cos(heading - h) >= 0 else -1.0


def _ego_frame_span(road, corners, sign: float) -> Tuple[float, float]:
    lats = [sign * road.centerline.project(cx, cy)[1] for cx, cy in corners]
    return min(lats), max(lats)


def _lane_span(lane, sign: float) -> Tuple[float, float]:
    lo, hi = lane.span
    return (lo, hi) if sign > 0 else (-hi, -lo)


def _turn_pattern(g: MapGraph, connector) -> BehavioralPattern:
    src = g.lanes[connector.source].road
    dst = g.lanes[connector.target].road
    if src == dst:
        return P.U_TURN
    label = relative_direction(g, connector.junction, src).get(dst, "straight")
    return {"left": P.TURN_LEFT, "right": P.TURN_RIGHT, "u-turn": P.U_TURN}.get(label, P.LANE_FOLLOWING)


def _side_for(lane, neighbor_side: str, sign: float) -> str:
    """Neighbor side relative to the lane's direction, re-expressed for the ego's travel direction."""
    same = (lane.dir == "forward") == (sign > 0)
    if same:
        return neighbor_side
    return "left" if neighbor_side == "right" else "right"


def frame_labels(trace: TimedTrace, g: MapGraph) -> List[BehavioralPattern]:
    labels: List[BehavioralPattern] = []
    home: Optional[str] = None
    if not trace.frames or all(f.ego.lane is None for f in trace.frames):
        raise ValueError("trace has no ego lane annotations")
    for f in trace.frames:
        e = f.ego
        lane = g.lanes.get(e.lane) if e.lane is not None else None
        if lane is None:
            labels.append(labels[-1] if labels else P.LANE_FOLLOWING)
            continue
        if lane.is_connector:
            labels.append(_turn_pattern(g, lane))
            home = None
            continue
        if home is None or g.lanes[home].road != lane.road:
            home = lane.id
        hl = g.lanes[home]
        road = g.roads[hl.road]
        sign = _travel_sign(road, e.x, e.y, e.heading)
        lo, hi = _ego_frame_span(road, e.corners(), sign)
        h_lo, h_hi = _lane_span(hl, sign)
        if lo >= h_lo - SPAN_EPS and hi <= h_hi + SPAN_EPS:
            labels.append(P.LANE_FOLLOWING)
            continue
        side = "right" if lo < h_lo - SPAN_EPS else "left"
        nb = g.neighbor(home, _side_for(hl, side, sign))
        if nb is None:
            labels.append(P.LANE_FOLLOWING)  # drifting over the road edge is not a lane change
            continue
        n_lo, n_hi = _lane_span(nb, sign)
        if lo >= n_lo - SPAN_EPS and hi <= n_hi + SPAN_EPS:
            home = nb.id
            labels.append(P.LANE_FOLLOWING)
            continue
        opposite = nb.dir != hl.dir
        if side == "right":
            labels.append(P.ENCROACHING_RIGHT if opposite else P.LANE_CHANGE_RIGHT)
        else:
            labels.append(P.ENCROACHING_LEFT if opposite else P.LANE_CHANGE_LEFT)
    return labels


def extract_behavioral_sequence(trace: TimedTrace, g: MapGraph) -> BehavioralSequence:
    labels = frame_labels(trace, g)
    segs: List[Segment] = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            segs.append(Segment(labels[start], start, i))
            start = i
    return BehavioralSequence(tuple(segs))


# -- targeted collision points ------------------------------------------------------------


def _arc(frames, a: int, b: int) -> List[float]:
    cum = [0.0]
    for i in range(a + 1, b + 1):
        cum.append(cum[-1] + math.hypot(frames[i].ego.x - frames[i - 1].ego.x, frames[i].ego.y - frames[i - 1].ego.y))
    return cum


def _point_at_arc(frames, a: int, cum: List[float], target: float) -> Tuple[float, float, float, int]:
    """Interpolated position at arc length ``target``; the frame is the first one at or past it."""
    for k in range(1, len(cum)):
        if cum[k] >= target - 1e-9:
            span = cum[k] - cum[k - 1]
            u = 0.0 if span <= 0 else (target - cum[k - 1]) / span
            p, q = frames[a + k - 1].ego, frames[a + k].ego
            idx = a + k if u > 1e-9 else a + k - 1
            return p.x + u * (q.x - p.x), p.y + u * (q.y - p.y), q.heading, idx
    e = frames[a].ego
    return e.x, e.y, e.heading, a


def _crossing(trace: TimedTrace, g: MapGraph, seg: Segment) -> Tuple[float, float, float, int, Optional[str]]:
    """First point where the ego centre crosses the separator of its starting lane."""
    frames = trace.frames
    start_lane = frames[seg.start].ego.lane
    before = frames[seg.start - 1].ego.lane if seg.start > 0 else start_lane
    home = g.lanes.get(before) if before is not None else None
    if home is None or home.is_connector:
        home = g.lanes.get(start_lane) if start_lane is not None else None
    last = min(seg.end, len(frames) - 1)
    if home is not None and home.road is not None:
        road = g.roads[home.road]
        e0 = frames[seg.start].ego
        sign = _travel_sign(road, e0.x, e0.y, e0.heading)
        lo, hi = _lane_span(home, sign)
        right = seg.pattern in (P.LANE_CHANGE_RIGHT, P.ENCROACHING_RIGHT)
        edge = lo if right else hi
        prev = None
        for i in range(max(seg.start - 1, 0), last + 1):
            e = frames[i].ego
            c = sign * road.centerline.project(e.x, e.y)[1]
            crossed = c <= edge if right else c >= edge
            if crossed and prev is not None and i > 0:
                pc, pe = prev
                u = (edge - pc) / (c - pc) if c != pc else 0.0
                x = pe.x + u * (e.x - pe.x)
                y = pe.y + u * (e.y - pe.y)
                nb = g.neighbor(home.id, _side_for(home, "right" if right else "left", sign))
                return x, y, e.heading, max(i, seg.start), nb.id if nb is not None else None
            if crossed and prev is None:
                break
            prev = (c, e)
        nb = g.neighbor(home.id, _side_for(home, "right" if right else "left", sign))
        target = nb.id if nb is not None else None
    else:
        target = None
    e = frames[seg.start].ego
    return e.x, e.y, e.heading, seg.start, target


def extract_collision_points(seq: BehavioralSequence, trace: TimedTrace, g: MapGraph) -> List[TargetedCollisionPoint]:
    frames = trace.frames
    out: List[TargetedCollisionPoint] = []
    for si, seg in enumerate(seq.segments):
        if seg.pattern in CHANGES:
            x, y, h, idx, lane = _crossing(trace, g, seg)
            out.append(TargetedCollisionPoint(x, y, frames[idx].t, h, seg.pattern, si, idx, lane))
        elif seg.pattern in TURNS:
            e = frames[seg.start].ego
            out.append(TargetedCollisionPoint(e.x, e.y, frames[seg.start].t, e.heading, seg.pattern, si, seg.start, e.lane))
        else:
            b = min(seg.end, len(frames) - 1)
            cum = _arc(frames, seg.start, b)
            for frac in (1.0 / 3.0, 2.0 / 3.0):
                x, y, h, idx = _point_at_arc(frames, seg.start, cum, frac * cum[-1])
                out.append(TargetedCollisionPoint(x, y, frames[idx].t, h, seg.pattern, si, idx, frames[idx].ego.lane))
    return [replace(p, id=f"P{i}") for i, p in enumerate(out)]


# -- parameterized scenarios ------------------------------------------------------------


@dataclass
class SearchConfig:
    delta: float = 10.0  # m, half-width of the d domain
    step: float = 4.0  # m, initial search step
    min_step: float = 0.25  # m
    eps_early: float = 0.5  # s
    eps_late: float = 0.5  # s
    max_iters: int = 12
    follow_speed_factor: float = 0.5  # same-lane NPC speed as a fraction of the limit
    brake_decel: float = 6.0  # m/s^2, abrupt-brake program
    min_clearance: float = 1.0  # m, spawn box clearance to every other agent
    grid: float = 0.25  # m, resolution of the legal-domain scan
    sim_budget: float = 40.0  # s


@dataclass
class ParameterizedScenario:
    base: ConcreteScenario
    point: TargetedCollisionPoint
    route: List[str]
    target_station: float  # station of the point along the NPC route
    behavior: Dict
    speed: float
    t: float
    domain: Tuple[float, float]
    npc_id: str

    @property
    def nominal(self) -> float:
        return self.speed * self.t

    def scenario_at(self, d: float, scenario_id: Optional[str] = None) -> ConcreteScenario:
        lo, hi = self.domain
        if not lo - 1e-9 <= d <= hi + 1e-9:
            raise ValueError(f"d={d} outside [{lo}, {hi}]")
        beh = dict(self.behavior)
        npc = NPCSpec(self.npc_id, list(self.route), self.target_station - d, beh)
        return replace(self.base, id=scenario_id or f"{self.base.id}~{self.point.id}", npcs=list(self.base.npcs) + [npc])


def _forward_route(g: MapGraph, lane_id: str, min_length: float) -> List[str]:
    route = [lane_id]
    total = g.lanes[lane_id].length
    while total < min_length:
        nxt = sorted(g.lanes[route[-1]].successors)
        if not nxt:
            nxt = sorted(c.id for c in g.connectors_from(route[-1]))
        if not nxt:
            break
        route.append(nxt[0])
        total += g.lanes[nxt[0]].length
    return route


def _initial_boxes(base: ConcreteScenario, g: MapGraph) -> List:
    boxes = [agent_box(g, base.ego.route, base.ego.start.offset, base.ego.length, base.ego.width)]
    for n in base.npcs:
        path = LanePath(g, n.route)
        x, y, h = path.line.point_at(n.start_offset)
        boxes.append(box_corners(x, y, h, n.length, n.width))
    return boxes


def _legal_domain(path: LanePath, target: float, nominal: float, others, cfg: SearchConfig,
                  extra=None) -> Optional[Tuple[float, float]]:
    """Contiguous run of legal d values in [nominal - delta, nominal + delta] closest to nominal."""
    lo, hi = nominal - cfg.delta, nominal + cfg.delta
    n = int(round((hi - lo) / cfg.grid))
    legal = []
    for i in range(n + 1):
        d = lo + i * cfg.grid
        start = target - d
        ok = 0.0 <= start <= path.length
        if ok:
            x, y, h = path.line.point_at(start)
            box = box_corners(x, y, h, VEHICLE_LENGTH, VEHICLE_WIDTH)
            ok = all(box_distance(box, b) >= cfg.min_clearance for b in others)
        if ok and extra is not None:
            ok = extra(start)
        legal.append((d, ok))
    runs, cur = [], []
    for d, ok in legal:
        if ok:
            cur.append(d)
        elif cur:
            runs.append(cur)
            cur = []
    if cur:
        runs.append(cur)
    if not runs:
        return None
    best = min(runs, key=lambda r: 0.0 if r[0] <= nominal <= r[-1] else min(abs(r[0] - nominal), abs(r[-1] - nominal)))
    return best[0], best[-1]


def _conflict(g: MapGraph, ego_conn, others) -> Optional[Tuple[str, float, float, float]]:
    """Connector crossing ``ego_conn``: (id, station on it, x, y) of the first crossing."""
    a = ego_conn.centerline.points
    for c in others:
        b = c.centerline.points
        cum = 0.0
        for j in range(len(b) - 1):
            p, q = b[j], b[j + 1]
            seg = math.hypot(q[0] - p[0], q[1] - p[1])
            for i in range(len(a) - 1):
                hit = _seg_intersect(a[i], a[i + 1], p, q)
                if hit is not None:
                    u = hit[2]
                    return c.id, cum + u * seg, hit[0], hit[1]
            cum += seg
    return None


def _seg_intersect(p1, p2, p3, p4):
    d = (p2[0] - p1[0]) * (p4[1] - p3[1]) - (p2[1] - p1[1]) * (p4[0] - p3[0])
    if abs(d) < 1e-12:
        return None
    t = ((p3[0] - p1[0]) * (p4[1] - p3[1]) - (p3[1] - p1[1]) * (p4[0] - p3[0])) / d
    u = ((p3[0] - p1[0]) * (p2[1] - p1[1]) - (p3[1] - p1[1]) * (p2[0] - p1[0])) / d
    if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
        return p1[0] + t * (p2[0] - p1[0]), p1[1] + t * (p2[1] - p1[1]), u
    return None


def build_parameterized_scenario(point: TargetedCollisionPoint, base: ConcreteScenario, headroom: int,
                                 g: Optional[MapGraph] = None, config: Optional[SearchConfig] = None,
                                 base_trace: Optional[TimedTrace] = None) -> ParameterizedScenario:
    if headroom < 1:
        raise ValueError("spawning needs headroom >= 1")
    cfg = config or SearchConfig()
    g = g or resolve_map(base.map_ref)
    others = _initial_boxes(base, g)
    npc_id = f"spawn{len(base.npcs)}"
    pat = point.pattern
    t = point.t
    if pat in CHANGES:
        if point.lane is None or point.lane not in g.lanes:
            raise NoLegalPlacement(f"{pat.value}: no adjacent lane to spawn on")
        lane = g.lanes[point.lane]
        route = _forward_route(g, lane.id, 150.0)
        path = LanePath(g, route)
        target, _ = path.line.project(point.x, point.y)
        v = lane.speed_limit
        behavior = {"program": "follow-lane", "speed": v}
        dom = _legal_domain(path, target, v * t, others, cfg)
    elif pat in TURNS:
        conn = g.lanes.get(point.lane) if point.lane else None
        if conn is None or not conn.is_connector:
            raise NoLegalPlacement(f"{pat.value}: point is not on a junction connector")
        cands = sorted((c for c in g.lanes.values() if c.junction == conn.junction and c.source != conn.source),
                       key=lambda c: c.id)
        hit = _conflict(g, conn, cands)
        if hit is None:
            raise NoLegalPlacement(f"{pat.value}: no crossing approach at {conn.junction}")
        cid, station, cx, cy = hit
        c = g.lanes[cid]
        route = [c.source, cid, c.target]
        path = LanePath(g, route)
        target = g.lanes[c.source].length + station
        v = g.lanes[c.source].speed_limit
        if base_trace is not None:
            t = ego_arrival(base_trace, cx, cy, point.heading, start=point.frame) or t
        point = replace(point, x=cx, y=cy, t=t)
        behavior = {"program": "follow-lane", "speed": v}
        dom = _legal_domain(path, target, v * t, others, cfg)
    else:
        if point.lane is None or point.lane not in g.lanes:
            raise NoLegalPlacement("lane-following point is off the lane graph")
        lane = g.lanes[point.lane]
        route = _forward_route(g, lane.id, 150.0)
        path = LanePath(g, route)
        target, _ = path.line.project(point.x, point.y)
        v = cfg.follow_speed_factor * lane.speed_limit
        ego_start = base.ego.start.offset if base.ego.start.lane == lane.id else -math.inf
        ahead = lambda start: start > ego_start  # the braking NPC must lead the ego
        behavior = {"program": "follow-lane-then-brake", "speed": v, "trigger_offset": target, "decel": cfg.brake_decel}
        dom = _legal_domain(path, target, v * t, others, cfg, ahead)
        if dom is None:
            # not enough lane behind the point: park the NPC on it instead
            v = 0.0
            behavior = {"program": "stationary", "speed": 0.0}
            dom = _legal_domain(path, target, 0.0, others, cfg, ahead)
            if dom is not None:
                dom = (0.0, 0.0) if dom[0] <= 0.0 <= dom[1] else None
    if dom is None:
        raise NoLegalPlacement(f"{pat.value}: no collision-free spawn distance in the domain")
    return ParameterizedScenario(base, point, route, target, behavior, v, t, dom, npc_id)


# -- parameter search -------------------------------------------------------------------


def ego_arrival(trace: TimedTrace, x: float, y: float, heading: float, start: int = 0, reach: float = 6.0) -> Optional[float]:
    """First time the ego centre passes the line through (x, y) normal to ``heading``."""
    c, s = math.cos(heading), math.sin(heading)
    for f in trace.frames[start:]:
        dx, dy = f.ego.x - x, f.ego.y - y
        if dx * c + dy * s >= 0.0 and abs(-dx * s + dy * c) <= reach:
            return f.t
    return None


def npc_arrival(trace: TimedTrace, g: MapGraph, npc_id: str, route: Sequence[str], station: float) -> Optional[float]:
    path = LanePath(g, route)
    for f in trace.frames:
        a = f.agent(npc_id)
        if a is None or a.lane is None or a.lane not in path.lanes:
            continue
        if path.station(a.lane, a.offset) >= station - 1e-9:
            return f.t
    return None


@dataclass
class Probe:
    d: float
    t_npc: Optional[float]
    t_ego: Optional[float]
    safety_critical: bool
    sequence: Optional[Tuple[str, ...]] = None
    scenario: Optional[ConcreteScenario] = None
    trace: Optional[TimedTrace] = None
    report: Optional[KpiReport] = None


@dataclass
class SearchOutcome:
    kind: str  # "violation" | "new-sequence" | "exhausted"
    probes: List[Probe]

    @property
    def last(self) -> Optional[Probe]:
        return self.probes[-1] if self.probes else None


def make_probe(ps: ParameterizedScenario, controller, thresholds: KpiThresholds, g: MapGraph,
               cfg: SearchConfig, name: Callable[[float], str]) -> Callable[[float], Probe]:
    def probe(d: float) -> Probe:
        sc = ps.scenario_at(d, name(d))
        tr = run(sc, controller, budget=cfg.sim_budget, g=g)
        rep = evaluate(tr, sc, thresholds, g)
        t_npc = npc_arrival(tr, g, ps.npc_id, ps.route, ps.target_station)
        t_ego = ego_arrival(tr, ps.point.x, ps.point.y, ps.point.heading)
        try:
            seq = extract_behavioral_sequence(tr, g).patterns
        except ValueError:
            seq = None
        return Probe(d, t_npc, t_ego, rep.safety_critical, seq, sc, tr, rep)

    return probe


def search_parameter(ps: ParameterizedScenario, controller=None, thresholds: Optional[KpiThresholds] = None,
                     max_iters: int = 12, known: Set[Tuple[str, ...]] = frozenset(), probe=None,
                     config: Optional[SearchConfig] = None, g: Optional[MapGraph] = None) -> SearchOutcome:
    """Tune d so that the NPC and the ego reach the point together.

    An early NPC moves its start back (d grows), a late one moves it
    forward; the step halves whenever the direction reverses.  Inside the
    tolerance band the search keeps moving toward exact agreement.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    cfg = config or SearchConfig()
    if probe is None:
        g = g or resolve_map(ps.base.map_ref)
        probe = make_probe(ps, controller, thresholds or KpiThresholds(), g, cfg, lambda d: f"{ps.base.id}~{ps.point.id}")
    lo, hi = ps.domain
    d = min(max(ps.nominal, lo), hi)
    step = cfg.step
    last_dir = 0
    probes: List[Probe] = []
    for _ in range(max_iters):
        pr = probe(d)
        probes.append(pr)
        if pr.safety_critical:
            return SearchOutcome("violation", probes)
        if pr.sequence is not None and pr.sequence not in known:
            return SearchOutcome("new-sequence", probes)
        t_ego = pr.t_ego if pr.t_ego is not None else ps.t
        t_npc = pr.t_npc if pr.t_npc is not None else math.inf
        if t_npc < t_ego - cfg.eps_early:
            direction = 1
        elif t_npc > t_ego + cfg.eps_late:
            direction = -1
        else:
            # aligned within tolerance but harmless: keep closing the remaining difference
            direction = 1 if t_npc < t_ego else -1
        if last_dir and direction != last_dir:
            step /= 2.0
        if step < cfg.min_step or hi - lo < cfg.min_step:
            break
        nd = min(max(d + direction * step, lo), hi)
        if abs(nd - d) < 1e-9:
            break
        d, last_dir = nd, direction
    return SearchOutcome("exhausted", probes)


# -- meta search -----------------------------------------------------------------------


@dataclass
class RunRecord:
    point: str
    d: Optional[float]
    t_npc: Optional[float]
    t_ego: Optional[float]
    outcome: str
    scenario_id: str
    safety_critical: bool = False
    performance: bool = False

    def log_line(self) -> str:
        def f(v):
            return "-" if v is None else f"{v:.3f}"

        return f"{self.point}\t{f(self.d)}\t{f(self.t_npc)}\t{f(self.t_ego)}\t{self.outcome}"


@dataclass
class SearchState:
    budget: int
    queue: List[Tuple] = field(default_factory=list)
    visited: List[Tuple[str, ...]] = field(default_factory=list)
    violations: List[Tuple[ConcreteScenario, KpiReport]] = field(default_factory=list)
    runs: List[RunRecord] = field(default_factory=list)
    artifacts: List[Tuple[ConcreteScenario, TimedTrace, KpiReport]] = field(default_factory=list)
    used: int = 0

    @property
    def remaining(self) -> int:
        return self.budget - self.used

    @property
    def safety_critical_found(self) -> bool:
        return any(r.safety_critical for _, r in self.violations)


def meta_search(base: ConcreteScenario, controller, budget: int, thresholds: Optional[KpiThresholds] = None,
                g: Optional[MapGraph] = None, config: Optional[SearchConfig] = None,
                base_trace: Optional[TimedTrace] = None, keep_artifacts: bool = False) -> SearchState:
    """Best-first exploration of targeted collision points under a simulation budget.

    The seed run counts against the budget unless ``base_trace`` is given.
    The search stops at the first safety-critical violation; performance-only
    violations are recorded and the search continues.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    cfg = config or SearchConfig()
    thresholds = thresholds or KpiThresholds()
    g = g or resolve_map(base.map_ref)
    st = SearchState(budget)
    counter = [0]

    if base_trace is None:
        base_trace = run(base, controller, budget=cfg.sim_budget, g=g)
        st.used += 1
        rep = evaluate(base_trace, base, thresholds, g)
        st.runs.append(RunRecord("seed", None, None, None, "seed", base.id, rep.safety_critical, rep.performance))

    def enqueue(scn: ConcreteScenario, trace: TimedTrace, tag: str):
        seq = extract_behavioral_sequence(trace, g)
        st.visited.append(seq.patterns)
        for p in extract_collision_points(seq, trace, g):
            p = replace(p, id=f"{tag}.{p.id}")
            counter[0] += 1
            heapq.heappush(st.queue, (p.rank, p.t, counter[0], p, scn, trace))

    enqueue(base, base_trace, "S0")
    n_seq = 1
    n_run = 0
    while st.queue and st.remaining > 0:
        _, _, _, point, scn, trace = heapq.heappop(st.queue)
        try:
            headroom = spawn_headroom(scn)
        except ValueError:
            headroom = 0
        if headroom < 1:
            st.runs.append(RunRecord(point.id, None, None, None, "no-headroom", scn.id))
            continue
        try:
            ps = build_parameterized_scenario(point, scn, headroom, g, cfg, base_trace=trace)
        except NoLegalPlacement:
            st.runs.append(RunRecord(point.id, None, None, None, "no-placement", scn.id))
            continue

        def named(d, _pid=point.id):
            nonlocal n_run
            n_run += 1
            return f"{base.id}.p{n_run:03d}"

        inner = make_probe(ps, controller, thresholds, g, cfg, named)

        def charged(d):
            st.used += 1
            pr = inner(d)
            st.runs.append(RunRecord(point.id, d, pr.t_npc, pr.t_ego, "probe", pr.scenario.id,
                                     pr.report.safety_critical, pr.report.performance))
            if keep_artifacts:
                st.artifacts.append((pr.scenario, pr.trace, pr.report))
            if pr.report.performance and not pr.report.safety_critical:
                st.violations.append((pr.scenario, pr.report))
            return pr

        out = search_parameter(ps, max_iters=min(cfg.max_iters, st.remaining), known=set(st.visited),
                               probe=charged, config=cfg)
        st.runs[-1].outcome = out.kind
        last = out.last
        if out.kind == "violation":
            st.violations.append((last.scenario, last.report))
            break
        if out.kind == "new-sequence" and last.sequence not in st.visited:
            enqueue(last.scenario, last.trace, f"S{n_seq}")
            n_seq += 1
    return st

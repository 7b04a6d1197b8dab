"""Deterministic fixed-step 2D traffic simulation with a pluggable ego controller.

Trace files are JSON Lines.  The first line is a header
(``{"type": "header", "schema": 1, "scenario": ..., "dt": 0.1, "agents": [...]}``),
then one line per frame::

    {"type": "frame", "t": 0.3,
     "agents": [{"agent_id": "ego", "x": .., "y": .., "heading": .., "speed": ..,
                 "accel": .., "lane": "r1_0", "offset": .., "lateral": ..}, ...],
     "signals": {"A:ab": "red", ...}}

and a closing ``{"type": "end", "termination": ..., "route_progress": ...}``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Protocol, Sequence, Tuple

from .concretize import PEDESTRIAN_SIZE, ConcreteScenario, PedestrianSpec
from .geometry import Polyline, box_corners, boxes_overlap, wrap_rad
from .mapsem import CROSSWALK_OFFSET, MapGraph, load_map

DT = 0.1
TRACE_SCHEMA = 1
EGO_ID = "ego"
WHEELBASE = 2.8
MAX_STEER = 0.6
MAX_STEER_RATE = 0.6  # rad/s
MAX_ACCEL = 4.0
MAX_BRAKE = 9.0


@lru_cache(maxsize=32)
def resolve_map(ref: str) -> MapGraph:
    """Load a map by file path, or by bundled fixture name."""
    p = Path(ref)
    if p.suffix == ".json" and p.exists():
        return load_map(p)
    bundled = resources.files("covdrive") / "data" / "maps" / f"{ref}.json"
    if bundled.is_file():
        return load_map(bundled)
    raise FileNotFoundError(f"map {ref!r} is neither a file nor a bundled fixture")


# -- state and trace ----------------------------------------------------------


@dataclass
class AgentState:
    id: str
    x: float
    y: float
    heading: float
    speed: float
    accel: float
    length: float
    width: float
    lane: Optional[str] = None
    offset: float = 0.0
    lateral: float = 0.0
    kind: str = "vehicle"

    def corners(self):
        return box_corners(self.x, self.y, self.heading, self.length, self.width)

    def record(self) -> dict:
        return {"agent_id": self.id, "x": self.x, "y": self.y, "heading": self.heading, "speed": self.speed,
                "accel": self.accel, "lane": self.lane, "offset": self.offset, "lateral": self.lateral}


@dataclass
class Frame:
    t: float
    agents: List[AgentState]
    signals: Dict[str, str] = field(default_factory=dict)

    @property
    def ego(self) -> AgentState:
        return self.agents[0]

    def agent(self, agent_id: str) -> Optional[AgentState]:
        for a in self.agents:
            if a.id == agent_id:
                return a
        return None


@dataclass
class TimedTrace:
    scenario_id: str
    frames: List[Frame]
    termination: str = "budget"
    dt: float = DT
    route_progress: float = 0.0
    error: Optional[str] = None

    @property
    def duration(self) -> float:
        return self.frames[-1].t if self.frames else 0.0

    def ego_states(self) -> List[AgentState]:
        return [f.ego for f in self.frames]

    def to_jsonl(self) -> str:
        lines = []
        if self.frames:
            agents = [{"agent_id": a.id, "kind": a.kind, "length": a.length, "width": a.width} for a in self.frames[0].agents]
        else:
            agents = []
        lines.append(json.dumps({"type": "header", "schema": TRACE_SCHEMA, "scenario": self.scenario_id,
                                 "dt": self.dt, "agents": agents}))
        for f in self.frames:
            lines.append(json.dumps({"type": "frame", "t": f.t, "agents": [a.record() for a in f.agents],
                                     "signals": dict(sorted(f.signals.items()))}))
        lines.append(json.dumps({"type": "end", "termination": self.termination,
                                 "route_progress": self.route_progress, "error": self.error}))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "TimedTrace":
        header, frames, end = None, [], {}
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["type"] == "header":
                header = rec
                if rec.get("schema") != TRACE_SCHEMA:
                    raise ValueError(f"unsupported trace schema {rec.get('schema')}")
            elif rec["type"] == "frame":
                dims = {a["agent_id"]: a for a in header["agents"]}
                agents = []
                for a in rec["agents"]:
                    d = dims[a["agent_id"]]
                    agents.append(AgentState(a["agent_id"], a["x"], a["y"], a["heading"], a["speed"], a["accel"],
                                             d["length"], d["width"], a["lane"], a["offset"], a["lateral"], d["kind"]))
                frames.append(Frame(rec["t"], agents, rec.get("signals", {})))
            elif rec["type"] == "end":
                end = rec
        if header is None:
            raise ValueError("trace has no header")
        return cls(header["scenario"], frames, end.get("termination", "budget"), header["dt"],
                   end.get("route_progress", 0.0), end.get("error"))

    @classmethod
    def load(cls, path) -> "TimedTrace":
        with open(path) as fh:
            return cls.from_jsonl(fh.read())


# -- paths ----------------------------------------------------------------------


class LanePath:
    """A chain of successive lanes flattened into one polyline."""

    def __init__(self, g: MapGraph, lanes: Sequence[str]):
        self.lanes = list(lanes)
        pts: List[Tuple[float, float]] = []
        self.starts = []
        total = 0.0
        for lid in self.lanes:
            lane = g.lanes[lid]
            self.starts.append(total)
            lp = lane.centerline.points
            if pts and math.hypot(pts[-1][0] - lp[0][0], pts[-1][1] - lp[0][1]) < 1e-6:
                lp = lp[1:]
            pts.extend(lp)
            total += lane.length
        self.line = Polyline(pts)
        self.length = self.line.length

    def lane_at(self, s: float) -> Tuple[str, float]:
        i = len(self.starts) - 1
        while i > 0 and s < self.starts[i]:
            i -= 1
        return self.lanes[i], s - self.starts[i]

    def station(self, lane_id: str, offset: float) -> float:
        return self.starts[self.lanes.index(lane_id)] + offset


class Route:
    """Ego route bookkeeping: stations are shared across same-road lane changes."""

    def __init__(self, g: MapGraph, lanes: Sequence[str], start_offset: float, dest_offset: float):
        self.lanes = list(lanes)
        self.index = {l: i for i, l in enumerate(self.lanes)}
        self.starts = [0.0]
        self.lane_change = [False]
        for prev, cur in zip(self.lanes, self.lanes[1:]):
            same_road = g.lanes[prev].road is not None and g.lanes[prev].road == g.lanes[cur].road
            self.lane_change.append(same_road)
            self.starts.append(self.starts[-1] if same_road else self.starts[-1] + g.lanes[prev].length)
        self.start = start_offset
        self.goal = self.starts[-1] + dest_offset

    def station(self, lane: Optional[str], offset: float) -> Optional[float]:
        i = self.index.get(lane) if lane is not None else None
        return None if i is None else self.starts[i] + offset

    def fraction(self, station: float) -> float:
        span = self.goal - self.start
        return 1.0 if span <= 0 else max(0.0, min(1.0, (station - self.start) / span))


# -- controller contract -------------------------------------------------------


@dataclass
class Observation:
    t: float
    dt: float
    ego: AgentState
    others: List[AgentState]
    signals: Dict[str, str]
    route: List[str]
    destination: Tuple[str, float]
    map: MapGraph
    environment: Dict[str, float]


@dataclass
class Control:
    accel: float
    steer: float = 0.0
    intent: str = "keep"


class EgoController(Protocol):
    def reset(self, scenario: ConcreteScenario, g: MapGraph) -> None: ...

    def step(self, obs: Observation) -> Control: ...


# -- world --------------------------------------------------------------------


def signal_states(program: Dict[str, dict], t: float) -> Dict[str, str]:
    out = {}
    for jid, prog in program.items():
        phases = prog["phases"]
        cycle = sum(p["duration"] for p in phases)
        tc = (t + prog.get("offset", 0.0)) % cycle
        acc = 0.0
        chosen = phases[-1]
        for p in phases:
            acc += p["duration"]
            if tc < acc:
                chosen = p
                break
        for road, state in chosen["states"].items():
            out[f"{jid}:{road}"] = state
    return dict(sorted(out.items()))


def pedestrian_path(g: MapGraph, ped: PedestrianSpec) -> Polyline:
    road = g.roads[ped.road]
    end = g.road_end_at(ped.road, ped.junction)
    s = CROSSWALK_OFFSET if end == "start" else road.length - CROSSWALK_OFFSET
    x, y, h = road.centerline.point_at(s)
    lo = min(l.span[0] for l in road.lanes) - 1.5
    hi = max(l.span[1] for l in road.lanes) + 1.5
    nx, ny = -math.sin(h), math.cos(h)
    a = (x + nx * lo, y + ny * lo)
    b = (x + nx * hi, y + ny * hi)
    return Polyline([a, b] if ped.side == 0 else [b, a])


class _Mover:
    """NPC vehicle or pedestrian moving along a fixed path."""

    def __init__(self, agent_id: str, kind: str, path_lanes: Optional[LanePath], line: Polyline, station: float,
                 speed: float, behavior: dict, length: float, width: float):
        self.id = agent_id
        self.kind = kind
        self.lanes = path_lanes
        self.line = line
        self.s = station
        self.v = speed
        self.a = 0.0
        self.behavior = behavior
        self.length = length
        self.width = width
        self.braking = False

    def state(self) -> AgentState:
        x, y, h = self.line.point_at(min(self.s, self.line.length))
        if self.lanes is not None:
            lane, off = self.lanes.lane_at(self.s)
        else:
            lane, off = None, self.s
        return AgentState(self.id, x, y, h, self.v, self.a, self.length, self.width, lane, off, 0.0, self.kind)


def _lead_gap(me: AgentState, others: Iterable[AgentState], reach: float = 50.0) -> Optional[Tuple[float, float]]:
    """(bumper gap, along-heading speed) of the nearest agent ahead in a straight corridor."""
    c, s = math.cos(me.heading), math.sin(me.heading)
    best = None
    for o in others:
        dx, dy = o.x - me.x, o.y - me.y
        along = dx * c + dy * s
        if along <= 0 or along > reach:
            continue
        lat = -dx * s + dy * c
        if abs(lat) > (me.width + o.width) / 2.0 + 0.3:
            continue
        gap = along - (me.length + o.length) / 2.0
        v_along = o.speed * math.cos(o.heading - me.heading)
        if best is None or gap < best[0]:
            best = (gap, v_along)
    return best


def follow_accel(gap: float, v: float, v_lead: float, standstill: float, headway: float,
                 k_gap: float, k_speed: float) -> float:
    """Linear car-following law; equilibrium gap is standstill + headway * v."""
    desired = standstill + headway * v
    a = k_gap * (gap - desired) + k_speed * (v_lead - v)
    if v > v_lead and gap < desired:
        # at least the constant deceleration that matches speeds before contact
        a = min(a, -(v * v - v_lead * v_lead) / (2.0 * max(gap - 0.5, 0.1)))
    return a


class World:
    def __init__(self, scenario: ConcreteScenario, g: MapGraph):
        self.scenario = scenario
        self.g = g
        e = scenario.ego
        lane = g.lanes[e.start.lane]
        x, y, h = lane.centerline.point_at(e.start.offset)
        self.ego = AgentState(EGO_ID, x, y, h, e.speed, 0.0, e.length, e.width, lane.id, e.start.offset, 0.0)
        self.steer = 0.0
        self.route = Route(g, e.route, e.start.offset, e.destination.offset)
        self.best_station = self.route.station(lane.id, e.start.offset) or 0.0
        wet = float(scenario.environment.get("wetness", 0.0))
        self.max_brake = MAX_BRAKE * (1.0 - 0.3 * min(max(wet, 0.0), 1.0))
        self.movers: List[_Mover] = []
        for n in scenario.npcs:
            path = LanePath(g, n.route)
            speed = 0.0 if n.behavior.get("program") == "stationary" else n.speed
            self.movers.append(_Mover(n.id, "vehicle", path, path.line, n.start_offset, speed, n.behavior, n.length, n.width))
        for p in scenario.pedestrians:
            line = pedestrian_path(g, p)
            self.movers.append(_Mover(p.id, "pedestrian", None, line, 0.0, 0.0,
                                      {"program": "cross-walkway", "trigger_time": p.trigger_time, "speed": p.speed},
                                      PEDESTRIAN_SIZE, PEDESTRIAN_SIZE))
        self.others = [m.state() for m in self.movers]

    def _annotate_ego(self, st: AgentState) -> None:
        g = self.g
        cands = []
        if st.lane is not None:
            cands.append(st.lane)
            cands += g.lanes[st.lane].successors
            for side in ("left", "right"):
                nb = g.neighbor(st.lane, side)
                if nb is not None:
                    cands.append(nb.id)
        cands += self.route.lanes
        hit = g.locate(st.x, st.y, cands)
        if hit is None:
            st.lane, st.offset, st.lateral = None, 0.0, 0.0
        else:
            st.lane, st.offset, st.lateral = hit

    def step_ego(self, control: Control, dt: float) -> None:
        e = self.ego
        a = min(max(control.accel, -self.max_brake), MAX_ACCEL)
        v = max(0.0, e.speed + a * dt)
        steer_cmd = min(max(control.steer, -MAX_STEER), MAX_STEER)
        dmax = MAX_STEER_RATE * dt
        self.steer += min(max(steer_cmd - self.steer, -dmax), dmax)
        h = wrap_rad(e.heading + v / WHEELBASE * math.tan(self.steer) * dt)
        self.ego = AgentState(EGO_ID, e.x + v * math.cos(h) * dt, e.y + v * math.sin(h) * dt, h, v, (v - e.speed) / dt,
                              e.length, e.width, e.lane, e.offset, e.lateral)
        self._annotate_ego(self.ego)
        st = self.route.station(self.ego.lane, self.ego.offset)
        if st is not None and st > self.best_station and st - self.best_station < 5.0:
            self.best_station = st

    def step_movers(self, t: float, dt: float, snapshot: List[AgentState]) -> None:
        for m in self.movers:
            prog = m.behavior.get("program", "follow-lane")
            target = float(m.behavior.get("speed", 0.0))
            if prog == "stationary":
                a = -m.v / dt
            elif prog == "cross-walkway":
                if t < m.behavior["trigger_time"] or m.s >= m.line.length:
                    target = 0.0
                a = (target - m.v) / dt
            else:
                if prog == "follow-lane-then-brake":
                    trig_s = m.behavior.get("trigger_offset")
                    trig_t = m.behavior.get("trigger_time")
                    if (trig_s is not None and m.s >= trig_s) or (trig_t is not None and t >= trig_t):
                        m.braking = True
                if m.braking:
                    a = -float(m.behavior.get("decel", 6.0))
                else:
                    a = min(max(0.5 * (target - m.v), -3.0), 2.0)
                    if m.behavior.get("yield", False):
                        me = m.state()
                        lead = _lead_gap(me, [o for o in snapshot if o.id != m.id])
                        if lead is not None:
                            a = min(a, follow_accel(lead[0], m.v, max(lead[1], 0.0), 2.5, 1.2, 0.3, 0.8))
                    a = max(a, -8.0)
            if m.s >= m.line.length and m.kind == "vehicle":
                a = -m.v / dt
            v = max(0.0, m.v + a * dt)
            m.a = (v - m.v) / dt
            m.v = v
            m.s = min(m.s + v * dt, m.line.length) if m.kind == "pedestrian" else m.s + v * dt
            if m.kind == "vehicle" and m.s > m.line.length:
                m.s = m.line.length
        self.others = [m.state() for m in self.movers]

    def ego_collision(self) -> List[str]:
        e = self.ego
        ec = e.corners()
        hits = []
        reach_e = math.hypot(e.length, e.width) / 2.0
        for o in self.others:
            reach = reach_e + math.hypot(o.length, o.width) / 2.0
            if abs(o.x - e.x) > reach or abs(o.y - e.y) > reach:
                continue
            if boxes_overlap(ec, o.corners()):
                hits.append(o.id)
        return hits

    def at_destination(self) -> bool:
        e = self.ego
        dest_lane = self.route.lanes[-1]
        return e.lane == dest_lane and e.offset >= self.scenario.ego.destination.offset - 1.0


def run(
    scenario: ConcreteScenario,
    controller: EgoController,
    budget: float = 40.0,
    g: Optional[MapGraph] = None,
    dt: float = DT,
) -> TimedTrace:
    """Simulate until the budget, ego arrival at its destination, or the first ego collision."""
    if g is None:
        g = resolve_map(scenario.map_ref)
    for lid in scenario.ego.route + [l for n in scenario.npcs for l in n.route]:
        if lid not in g.lanes:
            raise ValueError(f"scenario {scenario.id} references unknown lane {lid!r}")
    world = World(scenario, g)
    controller.reset(scenario, g)
    frames = [Frame(0.0, [replace(world.ego)] + world.others, signal_states(scenario.signal_program, 0.0))]
    steps = int(round(budget / dt))
    termination, error = "budget", None
    for k in range(1, steps + 1):
        prev = frames[-1]
        obs = Observation(prev.t, dt, prev.ego, prev.agents[1:], prev.signals, list(scenario.ego.route),
                          (scenario.ego.destination.lane, scenario.ego.destination.offset), g, scenario.environment)
        try:
            control = controller.step(obs)
        except Exception as exc:  # controller failures end the run, they are not simulator errors
            termination, error = "controller-error", f"{type(exc).__name__}: {exc}"
            break
        t = round(k * dt, 9)
        world.step_ego(control, dt)
        world.step_movers(prev.t, dt, prev.agents)
        frames.append(Frame(t, [replace(world.ego)] + world.others, signal_states(scenario.signal_program, t)))
        if world.ego_collision():
            termination = "collision"
            break
        if world.at_destination():
            termination = "destination-reached"
            break
    progress = 1.0 if termination == "destination-reached" else world.route.fraction(world.best_station)
    return TimedTrace(scenario.id, frames, termination, dt, progress, error)


# -- baseline ego planner ---------------------------------------------------------

FAULTS = ("no-right-turn-lane-change", "late-braking", "red-light-rolling")


@dataclass
class BaselineConfig:
    max_accel: float = 2.0
    comfort_brake: float = 2.5
    max_brake: float = 8.0
    standstill: float = 2.5
    headway: float = 1.2
    k_gap: float = 0.3
    k_speed: float = 0.8
    k_cruise: float = 0.6
    stop_standoff: float = 1.0
    turn_speed: float = 5.0
    uturn_speed: float = 3.0
    uturn_lookahead: float = 3.0
    lookahead_min: float = 6.0
    lookahead_gain: float = 0.9
    gap_front: float = 10.0
    gap_rear: float = 8.0
    sense_range: float = 60.0
    late_ttc: float = 0.9
    late_max_brake: float = 3.5
    change_time: float = 4.0  # s; lane changes follow a cosine lateral profile over this long
    change_min_length: float = 20.0
    change_accel: float = 0.5  # acceleration cap while changing lanes


class BaselineController:
    """Rule-based planner: pure pursuit, linear car following, signal stops, gap-accepting lane changes."""

    def __init__(self, faults: Iterable[str] = (), config: Optional[BaselineConfig] = None):
        self.faults = frozenset(faults)
        unknown = self.faults - set(FAULTS)
        if unknown:
            raise ValueError(f"unknown fault(s): {sorted(unknown)}")
        self.cfg = config or BaselineConfig()
        self.idx = 0
        self.g: Optional[MapGraph] = None
        self.route: List[str] = []
        self.start_offset = 0.0
        self.maneuver_offset = 0.0
        self.blend: Optional[Tuple[str, float, float, float]] = None  # (lane, s0, d0, length)

    def reset(self, scenario: ConcreteScenario, g: MapGraph) -> None:
        self.g = g
        self.route = list(scenario.ego.route)
        self.idx = 0
        self.start_offset = scenario.ego.start.offset
        self.maneuver_offset = scenario.ego.maneuver_offset
        self.blend = None

    # route helpers
    def _is_lane_change(self, i: int) -> bool:
        g = self.g
        a, b = g.lanes[self.route[i]], g.lanes[self.route[i + 1]]
        return a.road is not None and a.road == b.road

    def _change_side(self, i: int) -> str:
        nb = self.g.neighbor(self.route[i], "right")
        return "right" if nb is not None and nb.id == self.route[i + 1] else "left"

    def _right_turn_ahead(self, i: int) -> bool:
        g = self.g
        for lid in self.route[i:]:
            lane = g.lanes[lid]
            if lane.is_connector:
                h0 = lane.centerline.heading_at(0.0)
                h1 = lane.centerline.heading_at(lane.length)
                return wrap_rad(h1 - h0) < -math.radians(45)
        return False

    def _gap_free(self, lane_id: str, s: float, others: Sequence[AgentState]) -> bool:
        lane = self.g.lanes[lane_id]
        for o in others:
            if math.hypot(o.x - lane.centerline.xs[0], o.y - lane.centerline.ys[0]) > lane.length + 30:
                continue
            so, do = lane.centerline.project(o.x, o.y)
            if abs(do) < lane.width and -self.cfg.gap_rear < so - s < self.cfg.gap_front:
                return False
        return True

    def step(self, obs: Observation) -> Control:
        g, cfg, ego = self.g, self.cfg, obs.ego
        v = ego.speed
        lane = g.lanes[self.route[self.idx]]
        s, d = lane.centerline.project(ego.x, ego.y)
        # advance along successor lanes
        while self.idx + 1 < len(self.route) and not self._is_lane_change(self.idx) and s >= lane.length - 0.05:
            self.idx += 1
            lane = g.lanes[self.route[self.idx]]
            s, d = lane.centerline.project(ego.x, ego.y)
        stuck = False
        if self.idx + 1 < len(self.route) and self._is_lane_change(self.idx):
            side = self._change_side(self.idx)
            skip = (side == "right" and "no-right-turn-lane-change" in self.faults and self._right_turn_ahead(self.idx))
            travelled = s - self.start_offset
            if not skip and travelled >= self.maneuver_offset and self._gap_free(self.route[self.idx + 1], s, obs.others):
                self.idx += 1
                lane = g.lanes[self.route[self.idx]]
                s, d = lane.centerline.project(ego.x, ego.y)
                # the profile starts at the current look-ahead point so the pursuit target does not jump
                s0 = s + max(cfg.lookahead_min, cfg.lookahead_gain * v)
                span = max(cfg.change_min_length, cfg.change_time * v)
                span = max(min(span, lane.length - s0 - 5.0), 1.0)
                self.blend = (lane.id, s0, d, span)
            else:
                stuck = True

        # lateral: pure pursuit on the tracked lane chain
        ld = max(cfg.lookahead_min, cfg.lookahead_gain * v)
        if lane.is_connector and self._turn_angle(lane) > math.radians(150):
            ld = max(cfg.uturn_lookahead, 0.6 * v)
        target_s = s + ld
        j = self.idx
        cur = lane
        while target_s > cur.length and j + 1 < len(self.route) and not self._is_lane_change(j):
            target_s -= cur.length
            j += 1
            cur = g.lanes[self.route[j]]
        tx, ty, th = cur.centerline.point_at(target_s)
        if self.blend is not None and self.blend[0] == cur.id:
            _, s0, d0, span = self.blend
            u = min(max((target_s - s0) / span, 0.0), 1.0)
            off = d0 * 0.5 * (1.0 + math.cos(math.pi * u))
            tx, ty = tx - math.sin(th) * off, ty + math.cos(th) * off
        alpha = wrap_rad(math.atan2(ty - ego.y, tx - ego.x) - ego.heading)
        dist = max(math.hypot(tx - ego.x, ty - ego.y), 1e-3)
        steer = math.atan2(2.0 * WHEELBASE * math.sin(alpha), dist)

        # longitudinal
        v_des = lane.speed_limit
        if lane.is_connector and self._turn_angle(lane) > math.radians(30):
            v_des = min(v_des, cfg.turn_speed)
            if self._turn_angle(lane) > math.radians(150):
                v_des = min(v_des, cfg.uturn_speed)
        a = min(cfg.k_cruise * (v_des - v), cfg.max_accel)
        if self.blend is not None and self.blend[0] == lane.id and s < self.blend[1] + self.blend[3]:
            a = min(a, cfg.change_accel)
        to_end = lane.length - s - ego.length / 2.0
        nxt = g.lanes[self.route[self.idx + 1]] if self.idx + 1 < len(self.route) else None
        if nxt is not None and nxt.is_connector and not stuck and self._turn_angle(nxt) > math.radians(30):
            v_turn = cfg.uturn_speed if self._turn_angle(nxt) > math.radians(150) else cfg.turn_speed
            if v > v_turn:
                a = min(a, (v_turn ** 2 - v * v) / (2.0 * max(to_end + ego.length / 2.0, 0.5)))
        brake_cap = cfg.max_brake

        stop_dist = None
        if stuck and self._is_lane_change(self.idx):
            stop_dist = to_end - 2.0
        if nxt is not None and nxt.is_connector and "red-light-rolling" not in self.faults:
            state = obs.signals.get(f"{nxt.junction}:{lane.road}")
            if state in ("red", "yellow"):
                dist_line = g.stop_station(lane.id) - s - ego.length / 2.0 - cfg.stop_standoff
                need = v * v / (2.0 * max(dist_line, 0.01))
                limit = cfg.comfort_brake if state == "yellow" else cfg.max_brake
                if dist_line > -cfg.stop_standoff + 0.3 and need <= limit:
                    stop_dist = dist_line if stop_dist is None else min(stop_dist, dist_line)
        if stop_dist is not None:
            a = min(a, follow_accel(stop_dist, v, 0.0, 0.0, cfg.headway, cfg.k_gap, cfg.k_speed))

        lead = self._lead(obs, lane, s)
        if lead is not None:
            gap, v_lead = lead
            consider = True
            if "late-braking" in self.faults:
                closing = v - v_lead
                consider = gap < 2.0 or (closing > 0 and gap / closing < cfg.late_ttc)
                brake_cap = cfg.late_max_brake
            if consider:
                a = min(a, follow_accel(gap, v, v_lead, cfg.standstill, cfg.headway, cfg.k_gap, cfg.k_speed))
        a = max(a, -brake_cap)
        return Control(a, steer, "lane-change" if stuck else "keep")

    def _turn_angle(self, lane) -> float:
        return abs(wrap_rad(lane.centerline.heading_at(lane.length) - lane.centerline.heading_at(0.0)))

    def _lead(self, obs: Observation, lane, s: float) -> Optional[Tuple[float, float]]:
        """Nearest agent overlapping the ego corridor along the next route lanes."""
        g, ego, cfg = self.g, obs.ego, self.cfg
        chain = [(self.route[self.idx], -s)]
        acc = lane.length - s
        j = self.idx
        while acc < cfg.sense_range and j + 1 < len(self.route) and not self._is_lane_change(j):
            j += 1
            chain.append((self.route[j], acc))
            acc += g.lanes[self.route[j]].length
        best = None
        for o in obs.others:
            if math.hypot(o.x - ego.x, o.y - ego.y) > cfg.sense_range:
                continue
            for lid, base in chain:
                cl = g.lanes[lid].centerline
                so, do = cl.project(o.x, o.y)
                if so < -1.0 or so > cl.length + 1.0:
                    continue
                if abs(do) > (ego.width + o.width) / 2.0 + 0.3:
                    continue
                along = base + so
                gap = along - (ego.length + o.length) / 2.0
                if along <= 0:
                    break
                v_along = o.speed * math.cos(o.heading - cl.heading_at(so))
                if best is None or gap < best[0]:
                    best = (gap, max(v_along, 0.0))
                break
        return best


def baseline_controller(faults: Iterable[str] = (), config: Optional[BaselineConfig] = None) -> BaselineController:
    return BaselineController(faults, config)


def controller_from_spec(spec: str) -> BaselineController:
    """Parse ``baseline`` or ``baseline:fault1,fault2``."""
    name, _, rest = spec.partition(":")
    if name != "baseline":
        raise ValueError(f"unknown controller {name!r}")
    faults = [f for f in rest.split(",") if f]
    return BaselineController(faults)

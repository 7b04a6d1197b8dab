"""Turn abstract scenarios into concrete, simulator-ready scenarios.

Parameter-map files are JSON objects keyed by ``category.element``; each value
is a list of directives::

    {"param": "cloudiness", "range": [0.3, 1.0]}    environment parameter
    {"count_range": [3, 6]}                          NPC vehicle count
    {"count_range": [1, 2], "agent": "pedestrian"}   pedestrian count
    {"structure": "T_SHAPED"}                        road structure (or STRAIGHT, ROUNDABOUT, ...)
    {"ego_action": "left-turn"}                      drive-straight | left-turn | right-turn | u-turn
                                                     | lane-change-left | lane-change-right
    {"feature": "crosswalk"}                         required sub-map feature (crosswalk | signal)

Scenario files are the JSON form of :class:`ConcreteScenario`.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .catalog import AbstractScenario
from .geometry import box_corners, box_distance
from .mapsem import MapGraph, SubMapQuery, find_submaps, relative_direction

ENVIRONMENT_PARAMETERS = ("cloudiness", "rain", "wetness", "fog", "time_of_day")
EGO_ACTIONS = ("drive-straight", "left-turn", "right-turn", "u-turn", "lane-change-left", "lane-change-right")
ACTION_LABEL = {"drive-straight": "straight", "left-turn": "left", "right-turn": "right", "u-turn": "u-turn"}

VEHICLE_LENGTH = 4.6
VEHICLE_WIDTH = 1.9
PEDESTRIAN_SIZE = 0.6
INTERIOR_MARGIN = 0.1
MAX_PLACEMENT_RETRIES = 100


class NoMatchingSubMap(Exception):
    """The abstract scenario cannot be realized on this map."""


class PlacementExhausted(Exception):
    """Agents could not be placed collision-free within the retry bound."""


def child_seed(parent: int, index: int) -> int:
    digest = hashlib.sha256(f"{parent}:{index}".encode()).hexdigest()
    return int(digest[:15], 16)


def sample_parameter(lo: float, hi: float, policy: str = "random", rng: Optional[np.random.Generator] = None) -> float:
    if lo > hi:
        raise ValueError(f"empty range [{lo}, {hi}]")
    if lo == hi:
        return lo
    if policy == "midpoint":
        return (lo + hi) / 2.0
    if rng is None:
        rng = np.random.default_rng()
    if policy == "random":
        return float(rng.uniform(lo, hi))
    if policy == "interior-random":
        m = INTERIOR_MARGIN * (hi - lo)
        return float(rng.uniform(lo + m, hi - m))
    raise ValueError(f"unknown sampling policy {policy!r}")


def sample_count(lo: int, hi: int, rng: np.random.Generator) -> int:
    """Integer count kept off the range boundary where the range allows it."""
    if lo > hi:
        raise ValueError(f"empty range [{lo}, {hi}]")
    m = INTERIOR_MARGIN * (hi - lo)
    a, b = math.ceil(lo + m), math.floor(hi - m)
    if a > b:
        a, b = lo, hi
    return int(rng.integers(a, b + 1))


# -- parameter map ------------------------------------------------------------


@dataclass
class Semantics:
    structure: Optional[str] = None
    ego_action: str = "drive-straight"
    features: frozenset = frozenset()
    vehicle_range: Tuple[int, int] = (0, 0)
    pedestrian_range: Tuple[int, int] = (0, 0)
    params: List[Tuple[str, float, float]] = field(default_factory=list)


class ParameterMap:
    def __init__(self, entries: Mapping[str, Sequence[Mapping[str, Any]]]):
        self.entries: Dict[str, List[Dict[str, Any]]] = {k: [dict(d) for d in v] for k, v in entries.items()}
        for key, directives in self.entries.items():
            if "." not in key:
                raise ValueError(f"parameter-map key {key!r} must be category.element")
            for d in directives:
                if "range" in d:
                    lo, hi = d["range"]
                    if lo > hi:
                        raise ValueError(f"{key}: range lo > hi")
                    if d.get("param") not in ENVIRONMENT_PARAMETERS:
                        raise ValueError(f"{key}: unknown simulator parameter {d.get('param')!r}")
                elif "count_range" in d:
                    lo, hi = d["count_range"]
                    if int(lo) != lo or int(hi) != hi or lo > hi or lo < 0:
                        raise ValueError(f"{key}: count_range must be non-negative integers with lo <= hi")
                elif "ego_action" in d:
                    if d["ego_action"] not in EGO_ACTIONS:
                        raise ValueError(f"{key}: unknown ego action {d['ego_action']!r}")
                elif not ({"structure", "feature"} & d.keys()):
                    raise ValueError(f"{key}: unrecognized directive {d!r}")

    @classmethod
    def parse(cls, text: str) -> "ParameterMap":
        return cls(json.loads(text))

    @classmethod
    def load(cls, path) -> "ParameterMap":
        with open(path) as fh:
            return cls.parse(fh.read())

    def check_covers(self, catalog) -> None:
        missing = [f"{c.name}.{e}" for c in catalog.categories for e in c.elements if f"{c.name}.{e}" not in self.entries]
        if missing:
            raise ValueError(f"parameter map misses elements: {missing}")

    def semantics(self, abstract: AbstractScenario) -> Semantics:
        sem = Semantics()
        feats = set()
        for cat, elem in abstract.items:
            key = f"{cat}.{elem}"
            if key not in self.entries:
                raise ValueError(f"parameter map does not cover {key}")
            for d in self.entries[key]:
                if "range" in d:
                    sem.params.append((d["param"], float(d["range"][0]), float(d["range"][1])))
                elif "count_range" in d:
                    rng = (int(d["count_range"][0]), int(d["count_range"][1]))
                    if d.get("agent", "vehicle") == "pedestrian":
                        sem.pedestrian_range = rng
                    else:
                        sem.vehicle_range = rng
                elif "structure" in d:
                    sem.structure = d["structure"]
                elif "ego_action" in d:
                    sem.ego_action = d["ego_action"]
                if "feature" in d:
                    feats.add(d["feature"])
        if sem.pedestrian_range[1] > 0:
            feats.add("crosswalk")
        sem.features = frozenset(feats)
        return sem


# -- concrete scenario ----------------------------------------------------------


@dataclass
class Pose:
    lane: str
    offset: float


@dataclass
class EgoSpec:
    start: Pose
    destination: Pose
    route: List[str]
    speed: float = 0.0
    length: float = VEHICLE_LENGTH
    width: float = VEHICLE_WIDTH
    maneuver_offset: float = 0.0  # metres travelled before a route lane change may begin


@dataclass
class NPCSpec:
    id: str
    route: List[str]
    start_offset: float
    behavior: Dict[str, Any]
    length: float = VEHICLE_LENGTH
    width: float = VEHICLE_WIDTH

    @property
    def speed(self) -> float:
        return float(self.behavior.get("speed", 0.0))


@dataclass
class PedestrianSpec:
    id: str
    junction: str
    road: str
    side: int  # 0: start on the road's right edge, 1: left edge
    trigger_time: float
    speed: float = 1.4


@dataclass
class ConcreteScenario:
    id: str
    map_ref: str
    submap: Dict[str, str]
    abstract: Dict[str, str]
    ego: EgoSpec
    npcs: List[NPCSpec] = field(default_factory=list)
    pedestrians: List[PedestrianSpec] = field(default_factory=list)
    environment: Dict[str, float] = field(default_factory=dict)
    signal_program: Dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    vehicle_range: Tuple[int, int] = (0, 0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vehicle_range"] = list(self.vehicle_range)
        d["schema"] = 1
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ConcreteScenario":
        e = d["ego"]
        ego = EgoSpec(Pose(**e["start"]), Pose(**e["destination"]), list(e["route"]), e.get("speed", 0.0),
                      e.get("length", VEHICLE_LENGTH), e.get("width", VEHICLE_WIDTH), e.get("maneuver_offset", 0.0))
        return cls(
            id=d["id"], map_ref=d["map_ref"], submap=dict(d.get("submap", {})), abstract=dict(d.get("abstract", {})),
            ego=ego,
            npcs=[NPCSpec(**n) for n in d.get("npcs", [])],
            pedestrians=[PedestrianSpec(**p) for p in d.get("pedestrians", [])],
            environment=dict(d.get("environment", {})), signal_program=dict(d.get("signal_program", {})),
            seed=int(d.get("seed", 0)), vehicle_range=tuple(d.get("vehicle_range", (0, 0))),
        )

    @classmethod
    def from_json(cls, text: str) -> "ConcreteScenario":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ConcreteScenario":
        with open(path) as fh:
            return cls.from_json(fh.read())


def spawn_headroom(scenario: ConcreteScenario, density_range: Optional[Tuple[int, int]] = None) -> int:
    nmin, nmax = density_range if density_range is not None else scenario.vehicle_range
    n = len(scenario.npcs)
    if not nmin <= n <= nmax:
        raise ValueError(f"{n} vehicles outside density range [{nmin}, {nmax}]")
    return nmax - n


# -- instantiation --------------------------------------------------------------


def _choice(rng: np.random.Generator, items: Sequence):
    return items[int(rng.integers(len(items)))]


def _lane_route_to(g: MapGraph, start: str, goal: str) -> Optional[List[str]]:
    """Same-road lane-change path from ``start`` to ``goal`` (inclusive)."""
    for side in ("right", "left"):
        path = [start]
        cur = start
        while cur != goal:
            nb = g.neighbor(cur, side)
            if nb is None or nb.dir != g.lanes[start].dir:
                break
            cur = nb.id
            path.append(cur)
        if cur == goal:
            return path
    return None


def _junction_candidates(g: MapGraph, submap, action: str) -> List[Tuple[str, str]]:
    """(approach road, destination road) pairs realizing ``action`` at the junction."""
    jid = submap.id
    out = []
    for road, _ in g.junctions[jid].incident:
        labels = relative_direction(g, jid, road)
        targets = [road] if action == "u-turn" else sorted(r for r, lab in labels.items() if lab == ACTION_LABEL[action])
        ins = {l.id for l in g.incoming_lanes(jid, road)}
        for q in targets:
            outs = {l.id for l in g.outgoing_lanes(jid, q)}
            if any(a in ins and b in outs for a, b in g.junctions[jid].connections):
                out.append((road, q))
    return out


def _place_ego_junction(g: MapGraph, jid: str, road: str, dest_road: str, rng) -> EgoSpec:
    ins = g.incoming_lanes(jid, road)
    outs = {l.id for l in g.outgoing_lanes(jid, dest_road)}
    start = _choice(rng, ins)
    legal = [(a, b) for a, b in g.junctions[jid].connections if b in outs and a in {l.id for l in ins}]
    # prefer a connection reachable without a lane change
    direct = [c for c in legal if c[0] == start.id]
    a, b = _choice(rng, direct) if direct else _choice(rng, legal)
    changes = _lane_route_to(g, start.id, a)
    if changes is None:
        raise NoMatchingSubMap(f"no lane path from {start.id} to {a}")
    L = start.length
    if len(changes) > 1:
        lo, hi = max(5.0, L - 120.0), L - 70.0
    else:
        lo, hi = max(5.0, L - 90.0), L - 30.0
    if hi < lo:
        raise NoMatchingSubMap(f"approach lane {start.id} too short")
    offset = float(rng.uniform(lo, hi))
    out_lane = g.lanes[b]
    dest = float(rng.uniform(15.0, max(15.0, min(40.0, out_lane.length - 5.0))))
    route = changes + [f"{a}>{b}", b]
    return EgoSpec(Pose(start.id, offset), Pose(b, dest), route, maneuver_offset=float(rng.uniform(10.0, 20.0)))


def _place_ego_straight(g: MapGraph, road_id: str, action: str, rng) -> Optional[EgoSpec]:
    road = g.roads[road_id]
    lanes = []
    for lane in road.lanes:
        if lane.length < 110.0:
            continue
        if action == "drive-straight":
            lanes.append((lane, lane))
        elif action in ("lane-change-left", "lane-change-right"):
            nb = g.neighbor(lane.id, action.rsplit("-", 1)[1])
            if nb is not None and nb.dir == lane.dir:
                lanes.append((lane, nb))
    if not lanes:
        return None
    start, goal = _choice(rng, lanes)
    offset = float(rng.uniform(10.0, start.length - 95.0))
    dest = offset + float(rng.uniform(70.0, 85.0))
    route = [start.id] if goal is start else [start.id, goal.id]
    return EgoSpec(Pose(start.id, offset), Pose(goal.id, dest), route, maneuver_offset=float(rng.uniform(20.0, 30.0)))


def _continue_route(g: MapGraph, lane_id: str, rng) -> List[str]:
    route = [lane_id]
    conns = g.connectors_from(lane_id)
    if conns:
        c = _choice(rng, sorted(conns, key=lambda l: l.id))
        route += [c.id, c.target]
    return route


def agent_box(g: MapGraph, route: Sequence[str], offset: float, length: float, width: float):
    lane = g.lanes[route[0]]
    x, y, h = lane.centerline.point_at(offset)
    return box_corners(x, y, h, length, width)


def _signal_program(g: MapGraph, jid: str, rng) -> Dict[str, Any]:
    from .mapsem import incident_road_headings

    heads = incident_road_headings(g, jid)
    roads = sorted(heads)
    ref = heads[roads[0]] % 180.0
    group_a = [r for r in roads if min(abs(heads[r] % 180.0 - ref), 180.0 - abs(heads[r] % 180.0 - ref)) < 45.0]
    group_b = [r for r in roads if r not in group_a]
    green = float(rng.uniform(8.0, 15.0))

    def states(green_roads, yellow_roads=()):
        return {r: ("green" if r in green_roads else "yellow" if r in yellow_roads else "red") for r in roads}

    phases = [
        {"duration": green, "states": states(group_a)},
        {"duration": 3.0, "states": states((), group_a)},
        {"duration": 1.0, "states": states(())},
        {"duration": green, "states": states(group_b)},
        {"duration": 3.0, "states": states((), group_b)},
        {"duration": 1.0, "states": states(())},
    ]
    cycle = sum(p["duration"] for p in phases)
    return {"offset": float(rng.uniform(0.0, cycle)), "phases": phases}


def instantiate(
    abstract: AbstractScenario,
    g: MapGraph,
    pmap: ParameterMap,
    seed: int,
    map_ref: Optional[str] = None,
    scenario_id: Optional[str] = None,
) -> ConcreteScenario:
    rng = np.random.default_rng(seed)
    sem = pmap.semantics(abstract)
    if sem.structure is None:
        raise ValueError("no category maps to a road structure")
    action = sem.ego_action

    # Step 1: sub-map and ego start; Step 2: destination
    submaps = find_submaps(g, SubMapQuery(sem.structure, sem.features))
    viable = []
    for sm in submaps:
        if sm.kind == "junction":
            if action in ACTION_LABEL:
                cands = _junction_candidates(g, sm, action)
                if cands:
                    viable.append((sm, cands))
        elif action in ("drive-straight", "lane-change-left", "lane-change-right"):
            viable.append((sm, None))
    if not viable:
        raise NoMatchingSubMap(f"no sub-map realizes {sem.structure} with {action} and {sorted(sem.features)}")
    order = list(range(len(viable)))
    rng.shuffle(order)
    ego = None
    for idx in order:
        sm, cands = viable[idx]
        if cands is not None:
            road, dest_road = _choice(rng, cands)
            ego = _place_ego_junction(g, sm.id, road, dest_road, rng)
        else:
            ego = _place_ego_straight(g, sm.id, action, rng)
        if ego is not None:
            break
    if ego is None:
        raise NoMatchingSubMap(f"no lane long enough for {action} on any {sem.structure} segment")
    ego.speed = float(rng.uniform(0.5, 0.8)) * g.lanes[ego.start.lane].speed_limit

    # Step 3: other agents, signals, environment
    boxes = [agent_box(g, ego.route, ego.start.offset, ego.length, ego.width)]
    occupied = [(ego.start.lane, ego.start.offset)]
    if sm.kind == "junction":
        lanes = sorted(l.id for r, _ in g.junctions[sm.id].incident for l in g.roads[r].lanes)
    else:
        lanes = sorted(l.id for l in g.roads[sm.id].lanes)
    npcs = []
    for i in range(sample_count(*sem.vehicle_range, rng) if sem.vehicle_range[1] > 0 else 0):
        for _ in range(MAX_PLACEMENT_RETRIES):
            lane_id = _choice(rng, lanes)
            lane = g.lanes[lane_id]
            off = float(rng.uniform(5.0, max(5.0, lane.length - 5.0)))
            box = agent_box(g, [lane_id], off, VEHICLE_LENGTH, VEHICLE_WIDTH)
            if any(box_distance(box, b) < 2.0 for b in boxes):
                continue
            if any(l == lane_id and abs(o - off) < 15.0 for l, o in occupied):
                continue
            speed = float(rng.uniform(0.6, 1.0)) * lane.speed_limit
            npcs.append(NPCSpec(f"npc{i}", _continue_route(g, lane_id, rng), off,
                                {"program": "follow-lane", "speed": speed, "yield": True}))
            boxes.append(box)
            occupied.append((lane_id, off))
            break
        else:
            raise PlacementExhausted(f"could not place npc{i} after {MAX_PLACEMENT_RETRIES} attempts")

    peds = []
    n_peds = sample_count(*sem.pedestrian_range, rng) if sem.pedestrian_range[1] > 0 else 0
    crosswalks = [c for c in g.crosswalks if sm.kind == "junction" and c.junction == sm.id]
    if n_peds and not crosswalks:
        raise NoMatchingSubMap("pedestrians requested but the sub-map has no crosswalk")
    for i in range(n_peds):
        cw = _choice(rng, crosswalks)
        peds.append(PedestrianSpec(f"ped{i}", cw.junction, cw.road, int(rng.integers(2)), float(rng.uniform(0.0, 10.0))))

    signals = {}
    if sm.kind == "junction" and g.junctions[sm.id].signalized:
        signals[sm.id] = _signal_program(g, sm.id, rng)
    env = {name: sample_parameter(lo, hi, "random", rng) for name, lo, hi in sem.params}

    return ConcreteScenario(
        id=scenario_id or f"scn-{seed}",
        map_ref=map_ref or g.name,
        submap={"id": sm.id, "kind": sm.kind, "structure": sm.structure},
        abstract=abstract.to_dict(),
        ego=ego,
        npcs=npcs,
        pedestrians=peds,
        environment=env,
        signal_program=signals,
        seed=int(seed),
        vehicle_range=sem.vehicle_range,
    )

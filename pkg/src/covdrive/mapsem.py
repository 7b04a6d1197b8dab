"""Lane-graph maps with junction-shape classification and semantic sub-map queries.

Map files are JSON::

    {
      "name": "t_junction",
      "roads": [
        {"id": "r1", "centerline": [[x, y], ...], "speed_limit": 11.0,
         "lanes": [{"id": "r1_0", "dir": "forward", "width": 3.5,
                    "left_boundary": "solid-yellow", "right_boundary": "solid-white",
                    "successors": []}],
         "links": {"start": "J1", "end": null}}
      ],
      "junctions": [
        {"id": "J1", "incident": [{"road": "r1", "end": "start"}, ...],
         "connections": [["r2_0", "r1_0"], ...], "signalized": false}
      ],
      "crosswalks": [{"junction": "J1", "road": "r1"}]
    }

Forward lanes run along the centerline and sit to its right, stacked outward
in list order; backward lanes run against it and sit to its left.  Lane ids
default to ``<road>_<index>``.  Junction connections are materialized as
connector lanes ``<in>><out>`` following a cubic Bezier between lane ends
(u-turns use a keyhole path with a bounded turning radius).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .geometry import Polyline, bezier, heading_deg, wrap_deg

DEFAULT_TOLERANCE = 15.0
DEFAULT_SPEED_LIMIT = 11.0
CROSSWALK_WIDTH = 3.0
CROSSWALK_OFFSET = 3.0  # crosswalk centre, metres from the road's junction end
STOP_LINE_SETBACK = 6.0  # stop line distance from the lane end when a crosswalk is present


class MapError(ValueError):
    pass


class JunctionClass(str, Enum):
    T_SHAPED = "T_SHAPED"
    Y_SHAPED = "Y_SHAPED"
    FOUR_WAY = "FOUR_WAY"
    OTHER = "OTHER"


STRAIGHT = "STRAIGHT"

TEMPLATES: Dict[int, Dict[JunctionClass, Tuple[float, ...]]] = {
    3: {JunctionClass.T_SHAPED: (180.0, 90.0, 90.0), JunctionClass.Y_SHAPED: (120.0, 120.0, 120.0)},
    4: {JunctionClass.FOUR_WAY: (90.0, 90.0, 90.0, 90.0)},
}


@dataclass
class Lane:
    id: str
    centerline: Polyline
    width: float
    road: Optional[str] = None
    junction: Optional[str] = None
    dir: str = "forward"
    index: int = 0
    span: Tuple[float, float] = (0.0, 0.0)  # lateral extent in the road frame (left positive)
    left_boundary: str = "dashed-white"
    right_boundary: str = "dashed-white"
    speed_limit: float = DEFAULT_SPEED_LIMIT
    successors: List[str] = field(default_factory=list)
    source: Optional[str] = None  # connector lanes: incoming lane id
    target: Optional[str] = None  # connector lanes: outgoing lane id

    @property
    def length(self) -> float:
        return self.centerline.length

    @property
    def is_connector(self) -> bool:
        return self.junction is not None


@dataclass
class Road:
    id: str
    centerline: Polyline
    lanes: List[Lane]
    links: Dict[str, Optional[str]]
    speed_limit: float = DEFAULT_SPEED_LIMIT

    @property
    def length(self) -> float:
        return self.centerline.length

    def lanes_in(self, direction: str) -> List[Lane]:
        return [l for l in self.lanes if l.dir == direction]

    def is_straight(self, tol_deg: float = 5.0) -> bool:
        c = self.centerline
        h0 = math.degrees(c.heading_at(0.0))
        return all(abs(wrap_deg(math.degrees(math.atan2(uy, ux)) - h0)) <= tol_deg for ux, uy in zip(c._ux, c._uy))


@dataclass
class Junction:
    id: str
    incident: List[Tuple[str, str]]  # (road id, "start" | "end")
    connections: List[Tuple[str, str]]
    signalized: bool = False
    center: Tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class CrossWalk:
    junction: str
    road: str


@dataclass(frozen=True)
class TrafficLight:
    junction: str
    road: str  # approach road controlled by this head


@dataclass
class MapGraph:
    name: str
    roads: Dict[str, Road]
    junctions: Dict[str, Junction]
    crosswalks: List[CrossWalk]
    lanes: Dict[str, Lane]
    traffic_lights: List[TrafficLight] = field(default_factory=list)

    def road_end_at(self, road_id: str, junction_id: str) -> str:
        for r, end in self.junctions[junction_id].incident:
            if r == road_id:
                return end
        raise MapError(f"road {road_id} not incident to {junction_id}")

    def incoming_lanes(self, junction_id: str, road_id: str) -> List[Lane]:
        """Lanes of ``road_id`` driving into the junction, innermost first."""
        end = self.road_end_at(road_id, junction_id)
        return self.roads[road_id].lanes_in("forward" if end == "end" else "backward")

    def outgoing_lanes(self, junction_id: str, road_id: str) -> List[Lane]:
        end = self.road_end_at(road_id, junction_id)
        return self.roads[road_id].lanes_in("backward" if end == "end" else "forward")

    def connectors_from(self, lane_id: str) -> List[Lane]:
        return [l for l in self.lanes.values() if l.source == lane_id]

    def junction_ahead(self, lane_id: str) -> Optional[str]:
        """Junction at the downstream end of a road lane."""
        lane = self.lanes[lane_id]
        if lane.road is None:
            return None
        road = self.roads[lane.road]
        return road.links.get("end" if lane.dir == "forward" else "start")

    def neighbor(self, lane_id: str, side: str) -> Optional[Lane]:
        """Adjacent road lane on ``side`` ('left'/'right') relative to the lane's travel direction."""
        lane = self.lanes[lane_id]
        if lane.road is None:
            return None
        want_up = (side == "left") == (lane.dir == "forward")
        edge = lane.span[1] if want_up else lane.span[0]
        for other in self.roads[lane.road].lanes:
            if other.id == lane.id:
                continue
            if want_up and abs(other.span[0] - edge) < 1e-6:
                return other
            if not want_up and abs(other.span[1] - edge) < 1e-6:
                return other
        return None

    def has_crosswalk(self, junction_id: str, road_id: Optional[str] = None) -> bool:
        return any(c.junction == junction_id and (road_id is None or c.road == road_id) for c in self.crosswalks)

    def stop_station(self, lane_id: str) -> float:
        lane = self.lanes[lane_id]
        j = self.junction_ahead(lane_id)
        if j is not None and self.has_crosswalk(j, lane.road):
            return lane.length - STOP_LINE_SETBACK
        return lane.length

    def locate(self, x: float, y: float, candidates: Iterable[str] = ()) -> Optional[Tuple[str, float, float]]:
        """(lane id, station, lateral) of the lane containing the point.

        Candidates are tried in order before the full lane set; among the
        full set the smallest lateral offset wins.
        """
        for lid in candidates:
            lane = self.lanes.get(lid)
            if lane is None:
                continue
            s, d = lane.centerline.project(x, y)
            if -0.5 <= s <= lane.length + 0.5 and abs(d) <= lane.width / 2.0:
                return lid, s, d
        best = None
        for lid, lane in self.lanes.items():
            s, d = lane.centerline.project(x, y)
            if -0.5 <= s <= lane.length + 0.5 and abs(d) <= lane.width / 2.0:
                if best is None or abs(d) < abs(best[2]) - 1e-9:
                    best = (lid, s, d)
        return best

    def to_dict(self) -> dict:
        roads = []
        for r in self.roads.values():
            roads.append({
                "id": r.id,
                "centerline": [list(p) for p in r.centerline.points],
                "speed_limit": r.speed_limit,
                "lanes": [
                    {"id": l.id, "dir": l.dir, "width": l.width, "left_boundary": l.left_boundary,
                     "right_boundary": l.right_boundary, "successors": list(l.successors)}
                    for l in r.lanes
                ],
                "links": dict(r.links),
            })
        return {
            "name": self.name,
            "roads": roads,
            "junctions": [
                {"id": j.id, "incident": [{"road": r, "end": e} for r, e in j.incident],
                 "connections": [list(c) for c in j.connections], "signalized": j.signalized}
                for j in self.junctions.values()
            ],
            "crosswalks": [{"junction": c.junction, "road": c.road} for c in self.crosswalks],
        }


# -- parsing ------------------------------------------------------------------


def _road_lanes(road_id: str, centerline: Polyline, entries: Sequence[dict], speed_limit: float) -> List[Lane]:
    lanes = []
    cum = {"forward": 0.0, "backward": 0.0}
    for i, entry in enumerate(entries):
        direction = entry.get("dir", "forward")
        if direction not in ("forward", "backward"):
            raise MapError(f"road {road_id}: lane dir must be forward/backward, got {direction!r}")
        width = float(entry.get("width", 3.5))
        if not width > 0:
            raise MapError(f"road {road_id}: lane width must be positive")
        inner = cum[direction]
        cum[direction] += width
        centre = inner + width / 2.0
        if direction == "forward":
            geom = centerline.offset(-centre)
            span = (-(inner + width), -inner)
        else:
            geom = centerline.offset(centre).reversed()
            span = (inner, inner + width)
        lanes.append(Lane(
            id=str(entry.get("id", f"{road_id}_{i}")), centerline=geom, width=width, road=road_id,
            dir=direction, index=i, span=span,
            left_boundary=entry.get("left_boundary", "dashed-white"),
            right_boundary=entry.get("right_boundary", "dashed-white"),
            speed_limit=speed_limit, successors=[str(s) for s in entry.get("successors", [])],
        ))
    return lanes


UTURN_RADIUS = 5.0


def _keyhole(x0: float, y0: float, h0: float, lateral: float, forward: float, radius: float = UTURN_RADIUS) -> List[Tuple[float, float]]:
    """Omega-shaped u-turn: right arc, wide left arc, right arc.

    ``lateral`` is the leftward offset of the target lane start; the shape
    keeps the turning radius at ``radius`` even for adjacent lanes.
    """
    R = radius
    c = (lateral + 2.0 * R) / (4.0 * R)
    theta = math.acos(min(max(c, -1.0), 1.0)) if lateral < 2.0 * R else 0.0
    if lateral >= 2.0 * R:
        R = lateral / 2.0
    pts = [(0.0, 0.0)]
    x, y, h = 0.0, 0.0, 0.0

    def arc(sign: float, angle: float, n: int):
        nonlocal x, y, h
        cx, cy = x - sign * R * math.sin(h), y + sign * R * math.cos(h)
        for i in range(1, n + 1):
            hh = h + sign * angle * i / n
            pts.append((cx + sign * R * math.sin(hh), cy - sign * R * math.cos(hh)))
        h += sign * angle
        x, y = pts[-1]

    if theta > 0:
        arc(-1.0, theta, 6)
    arc(1.0, math.pi + 2.0 * theta, 24)
    if theta > 0:
        arc(-1.0, theta, 6)
    if forward < -1e-6:
        pts.append((forward, pts[-1][1]))
    ch, sh = math.cos(h0), math.sin(h0)
    return [(x0 + ch * px - sh * py, y0 + sh * px + ch * py) for px, py in pts]


def _connector(jid: str, a: Lane, b: Lane) -> Lane:
    x0, y0, h0 = a.centerline.point_at(a.length)
    x3, y3, h3 = b.centerline.point_at(0.0)
    gap = math.hypot(x3 - x0, y3 - y0)
    turn = abs(wrap_deg(math.degrees(h3 - h0)))
    if turn > 150:
        dx, dy = x3 - x0, y3 - y0
        lateral = -math.sin(h0) * dx + math.cos(h0) * dy
        forward = math.cos(h0) * dx + math.sin(h0) * dy
        pts = _keyhole(x0, y0, h0, lateral, forward)
        pts[-1] = (x3, y3)
    else:
        reach = 0.4 * gap
        pts = bezier((x0, y0), (x0 + reach * math.cos(h0), y0 + reach * math.sin(h0)),
                     (x3 - reach * math.cos(h3), y3 - reach * math.sin(h3)), (x3, y3))
    return Lane(
        id=f"{a.id}>{b.id}", centerline=Polyline(pts), width=min(a.width, b.width), junction=jid,
        speed_limit=min(a.speed_limit, b.speed_limit), successors=[b.id], source=a.id, target=b.id,
    )


def build_map(data: dict) -> MapGraph:
    roads: Dict[str, Road] = {}
    lanes: Dict[str, Lane] = {}
    for entry in data.get("roads", []):
        rid = str(entry["id"])
        if rid in roads:
            raise MapError(f"duplicate road id {rid}")
        pts = entry.get("centerline") or []
        if len(pts) < 2:
            raise MapError(f"road {rid}: centerline needs at least 2 points")
        try:
            line = Polyline(pts)
        except ValueError as exc:
            raise MapError(f"road {rid}: degenerate geometry ({exc})") from None
        limit = float(entry.get("speed_limit", DEFAULT_SPEED_LIMIT))
        road_lanes = _road_lanes(rid, line, entry.get("lanes") or [], limit)
        if not road_lanes:
            raise MapError(f"road {rid}: needs at least one lane")
        links = entry.get("links") or {}
        roads[rid] = Road(rid, line, road_lanes, {"start": links.get("start"), "end": links.get("end")}, limit)
        for lane in road_lanes:
            if lane.id in lanes:
                raise MapError(f"duplicate lane id {lane.id}")
            lanes[lane.id] = lane

    junctions: Dict[str, Junction] = {}
    for entry in data.get("junctions", []):
        jid = str(entry["id"])
        incident = []
        for inc in entry.get("incident", []):
            rid, end = str(inc["road"]), inc["end"]
            if rid not in roads:
                raise MapError(f"junction {jid}: dangling road reference {rid!r}")
            if end not in ("start", "end"):
                raise MapError(f"junction {jid}: road end must be start/end")
            if roads[rid].links.get(end) != jid:
                raise MapError(f"junction {jid}: road {rid} does not link back at its {end}")
            incident.append((rid, end))
        conns = [(str(a), str(b)) for a, b in entry.get("connections", [])]
        incident_roads = {r for r, _ in incident}
        for a, b in conns:
            for lid in (a, b):
                if lid not in lanes:
                    raise MapError(f"junction {jid}: dangling lane reference {lid!r}")
                if lanes[lid].road not in incident_roads:
                    raise MapError(f"junction {jid}: lane {lid} is not on an incident road")
        pts = []
        for rid, end in incident:
            line = roads[rid].centerline
            pts.append(line.point_at(0.0 if end == "start" else line.length)[:2])
        center = (sum(p[0] for p in pts) / len(pts), sum(p[1] for p in pts) / len(pts)) if pts else (0.0, 0.0)
        junctions[jid] = Junction(jid, incident, conns, bool(entry.get("signalized", False)), center)

    for road in roads.values():
        for end, ref in road.links.items():
            if ref is None:
                continue
            if ref in junctions:
                if (road.id, end) not in junctions[ref].incident:
                    raise MapError(f"road {road.id}: junction {ref} does not list it as incident")
            elif ref not in roads:
                raise MapError(f"road {road.id}: dangling link {ref!r}")
    for lane in list(lanes.values()):
        for succ in lane.successors:
            if succ not in lanes:
                raise MapError(f"lane {lane.id}: dangling successor reference {succ!r}")

    g = MapGraph(str(data.get("name", "map")), roads, junctions, [], lanes)
    for j in junctions.values():
        for a, b in j.connections:
            if lanes[a] not in g.incoming_lanes(j.id, lanes[a].road) or lanes[b] not in g.outgoing_lanes(j.id, lanes[b].road):
                raise MapError(f"junction {j.id}: connection {a}->{b} runs against lane directions")
            conn = _connector(j.id, lanes[a], lanes[b])
            lanes[conn.id] = conn
            lanes[a].successors.append(conn.id)
    for entry in data.get("crosswalks", []):
        cw = CrossWalk(str(entry["junction"]), str(entry["road"]))
        if cw.junction not in junctions:
            raise MapError(f"crosswalk: dangling junction {cw.junction!r}")
        if cw.road not in {r for r, _ in junctions[cw.junction].incident}:
            raise MapError(f"crosswalk: road {cw.road!r} not incident to {cw.junction}")
        g.crosswalks.append(cw)
    g.traffic_lights = [TrafficLight(j.id, r) for j in junctions.values() if j.signalized for r, _ in j.incident]
    return g


def parse_map(text: str) -> MapGraph:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MapError(f"syntax error: {exc.msg} (line {exc.lineno}, column {exc.colno})") from None
    if not isinstance(data, dict):
        raise MapError("map file must hold a JSON object")
    try:
        return build_map(data)
    except (KeyError, TypeError) as exc:
        raise MapError(f"malformed map entry: {exc}") from None


def load_map(path) -> MapGraph:
    with open(path) as fh:
        return parse_map(fh.read())


# -- junction shape -----------------------------------------------------------


def incident_road_headings(g: MapGraph, junction_id: str) -> Dict[str, float]:
    """Outward heading (degrees in [0, 360)) of every incident road at the junction."""
    j = g.junctions[junction_id]
    if not j.incident:
        raise MapError(f"junction {junction_id} has no incident roads")
    out = {}
    for rid, end in j.incident:
        xs, ys = g.roads[rid].centerline.xs, g.roads[rid].centerline.ys
        if end == "start":
            out[rid] = heading_deg(xs[1] - xs[0], ys[1] - ys[0])
        else:
            out[rid] = heading_deg(xs[-2] - xs[-1], ys[-2] - ys[-1])
    return out


def angular_gaps(headings: Iterable[float]) -> List[float]:
    """Counter-clockwise gaps between consecutive sorted headings; they sum to 360."""
    hs = sorted(h % 360.0 for h in headings)
    gaps = [hs[i + 1] - hs[i] for i in range(len(hs) - 1)]
    gaps.append(360.0 - hs[-1] + hs[0])
    return gaps


@dataclass(frozen=True)
class Classification:
    kind: JunctionClass
    gaps: Tuple[float, ...]


def classify_gaps(gaps: Sequence[float], tolerance: float = DEFAULT_TOLERANCE) -> JunctionClass:
    """Match a gap multiset against the same-arity templates."""
    observed = sorted(gaps)
    for kind, template in TEMPLATES.get(len(gaps), {}).items():
        if all(abs(a - b) <= tolerance for a, b in zip(observed, sorted(template))):
            return kind
    return JunctionClass.OTHER


def classify_junction(g: MapGraph, junction_id: str, tolerance: float = DEFAULT_TOLERANCE) -> Classification:
    headings = incident_road_headings(g, junction_id)
    if len(headings) < 3:
        raise MapError(f"junction {junction_id} has fewer than 3 incident roads")
    gaps = tuple(angular_gaps(headings.values()))
    return Classification(classify_gaps(gaps, tolerance), gaps)


def relative_direction(g: MapGraph, junction_id: str, approach_road: str) -> Dict[str, str]:
    """Label every other incident road as seen by a vehicle arriving on ``approach_road``."""
    headings = incident_road_headings(g, junction_id)
    if approach_road not in headings:
        raise MapError(f"road {approach_road} not incident to junction {junction_id}")
    travel = headings[approach_road] + 180.0
    out = {}
    for rid, h in headings.items():
        if rid == approach_road:
            continue
        off = wrap_deg(h - travel)
        if abs(off) <= 45.0:
            out[rid] = "straight"
        elif 45.0 < off <= 135.0:
            out[rid] = "left"
        elif -135.0 <= off < -45.0:
            out[rid] = "right"
        else:
            out[rid] = "u-turn"
    return out


# -- sub-map queries ----------------------------------------------------------


@dataclass(frozen=True)
class SubMapQuery:
    structure: str  # a JunctionClass value or STRAIGHT
    features: frozenset = frozenset()  # subset of {"crosswalk", "signal"}
    tolerance: float = DEFAULT_TOLERANCE
    min_length: float = 60.0  # straight segments only


@dataclass
class SubMap:
    id: str
    kind: str  # "junction" | "road"
    structure: str
    features: Dict[str, object]
    directions: Dict[str, Dict[str, str]] = field(default_factory=dict)


def find_submaps(g: MapGraph, query: SubMapQuery) -> List[SubMap]:
    unknown = set(query.features) - {"crosswalk", "signal"}
    if unknown:
        raise MapError(f"unknown sub-map feature(s): {sorted(unknown)}")
    out = []
    if query.structure == STRAIGHT:
        if query.features:
            return []
        for rid in sorted(g.roads):
            road = g.roads[rid]
            if road.is_straight() and road.length >= query.min_length:
                out.append(SubMap(rid, "road", STRAIGHT, {
                    "crosswalk": False, "signal": False,
                    "lane_counts": {rid: (len(road.lanes_in("forward")), len(road.lanes_in("backward")))},
                }))
        return out
    for jid in sorted(g.junctions):
        j = g.junctions[jid]
        if len(j.incident) < 3:
            continue
        cls = classify_junction(g, jid, query.tolerance)
        if cls.kind.value != query.structure:
            continue
        feats = {
            "crosswalk": g.has_crosswalk(jid),
            "signal": j.signalized,
            "lane_counts": {r: (len(g.roads[r].lanes_in("forward")), len(g.roads[r].lanes_in("backward"))) for r, _ in j.incident},
        }
        if "crosswalk" in query.features and not feats["crosswalk"]:
            continue
        if "signal" in query.features and not feats["signal"]:
            continue
        dirs = {r: relative_direction(g, jid, r) for r, _ in j.incident}
        out.append(SubMap(jid, "junction", cls.kind.value, feats, dirs))
    return out

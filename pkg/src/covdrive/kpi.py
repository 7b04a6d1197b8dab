"""Key performance indicators over timed traces.

Seven KPIs are checked.  ``collision`` and ``too-close`` make a run
safety-critical.  ``harsh-brake``, ``harsh-accel``, ``lateral-jerk``,
``route-deviation`` and ``signal-violation`` are performance issues.  A run
may carry both flags.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

from .concretize import ConcreteScenario
from .geometry import box_distance, boxes_overlap
from .mapsem import MapGraph

KPIS = ("collision", "too-close", "harsh-brake", "harsh-accel", "lateral-jerk", "route-deviation", "signal-violation")
SAFETY_KPIS = frozenset({"collision", "too-close"})
STATION_JUMP = 5.0  # larger per-frame station advances are lane-annotation glitches, not progress


class KpiError(ValueError):
    pass


@dataclass(frozen=True)
class KpiThresholds:
    too_close: float = 0.5  # surface-to-surface, m
    harsh_brake: float = -3.0  # m/s^2
    harsh_accel: float = 3.0  # m/s^2
    lateral_jerk: float = 2.5  # m/s^3
    route_progress_min: float = 0.95
    arrival_budget: Optional[float] = None  # s; None means the simulation budget

    def __post_init__(self):
        vals = [self.too_close, self.harsh_brake, self.harsh_accel, self.lateral_jerk, self.route_progress_min]
        if self.arrival_budget is not None:
            vals.append(self.arrival_budget)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("thresholds must be finite")
        if self.harsh_brake >= 0 or self.harsh_accel <= 0:
            raise ValueError("brake threshold must be negative and accel threshold positive")
        if self.too_close < 0 or self.lateral_jerk <= 0:
            raise ValueError("distance and jerk thresholds must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "KpiThresholds":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown threshold(s): {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "KpiThresholds":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class KpiEvent:
    t: float
    agents: Tuple[str, ...]
    value: float


@dataclass
class KpiResult:
    violated: bool = False
    events: List[KpiEvent] = field(default_factory=list)


@dataclass
class KpiReport:
    scenario_id: str
    results: Dict[str, KpiResult]
    termination: str = "budget"

    @property
    def violations(self) -> List[str]:
        return [k for k in KPIS if self.results[k].violated]

    @property
    def safety_critical(self) -> bool:
        return any(self.results[k].violated for k in SAFETY_KPIS)

    @property
    def performance(self) -> bool:
        return any(self.results[k].violated for k in KPIS if k not in SAFETY_KPIS)

    @property
    def problematic(self) -> bool:
        return self.safety_critical or self.performance

    def to_dict(self) -> dict:
        kpis = {}
        for k in KPIS:
            r = self.results[k]
            kpis[k] = {
                "verdict": "violation" if r.violated else "pass",
                "events": [{"t": e.t, "agents": list(e.agents), "value": e.value} for e in r.events],
            }
        return {
            "scenario": self.scenario_id,
            "termination": self.termination,
            "safety_critical": self.safety_critical,
            "performance": self.performance,
            "kpis": kpis,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "KpiReport":
        results = {}
        for k in KPIS:
            r = d["kpis"][k]
            events = [KpiEvent(e["t"], tuple(e["agents"]), e["value"]) for e in r["events"]]
            results[k] = KpiResult(r["verdict"] == "violation", events)
        return cls(d["scenario"], results, d.get("termination", "budget"))

    @classmethod
    def load(cls, path) -> "KpiReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _episodes(flags: Sequence[bool]) -> List[Tuple[int, int]]:
    """Half-open index ranges of consecutive True runs."""
    out, start = [], None
    for i, f in enumerate(flags):
        if f and start is None:
            start = i
        elif not f and start is not None:
            out.append((start, i))
            start = None
    if start is not None:
        out.append((start, len(flags)))
    return out


def _r(x: float) -> float:
    return round(float(x), 6)


def third_difference_jerk(values: Sequence[float], dt: float) -> List[float]:
    """Backward third finite difference; element i is the jerk at sample i+3."""
    return [(values[i + 3] - 3 * values[i + 2] + 3 * values[i + 1] - values[i]) / dt ** 3 for i in range(len(values) - 3)]


def _contact_kpis(trace, thresholds: KpiThresholds) -> Tuple[KpiResult, KpiResult]:
    ids = [a.id for a in trace.frames[0].agents[1:]] if trace.frames else []
    overlap = {i: [] for i in ids}
    dist = {i: [] for i in ids}
    for f in trace.frames:
        e = f.ego
        ec = e.corners()
        re = math.hypot(e.length, e.width) / 2.0
        for o in f.agents[1:]:
            reach = re + math.hypot(o.length, o.width) / 2.0 + thresholds.too_close + 1.0
            if math.hypot(o.x - e.x, o.y - e.y) > reach:
                overlap[o.id].append(False)
                dist[o.id].append(math.inf)
                continue
            oc = o.corners()
            hit = boxes_overlap(ec, oc)
            overlap[o.id].append(hit)
            dist[o.id].append(0.0 if hit else box_distance(ec, oc))
    coll, close = [], []
    for aid in ids:
        for a, _ in _episodes(overlap[aid]):
            coll.append(KpiEvent(_r(trace.frames[a].t), ("ego", aid), 0.0))
        flags = [not h and d < thresholds.too_close for h, d in zip(overlap[aid], dist[aid])]
        for a, b in _episodes(flags):
            close.append(KpiEvent(_r(trace.frames[a].t), ("ego", aid), _r(min(dist[aid][a:b]))))
    coll.sort(key=lambda e: (e.t, e.agents))
    close.sort(key=lambda e: (e.t, e.agents))
    return KpiResult(bool(coll), coll), KpiResult(bool(close), close)


def _accel_kpis(trace, thresholds: KpiThresholds) -> Tuple[KpiResult, KpiResult]:
    acc = [f.ego.accel for f in trace.frames]
    out = []
    for flags, pick in (([a < thresholds.harsh_brake for a in acc], min), ([a > thresholds.harsh_accel for a in acc], max)):
        events = [KpiEvent(_r(trace.frames[a].t), ("ego",), _r(pick(acc[a:b]))) for a, b in _episodes(flags)]
        out.append(KpiResult(bool(events), events))
    return out[0], out[1]


def _straight_window(g: Optional[MapGraph], lane_id: str, win) -> bool:
    """All samples project onto one segment of the lane reference.

    Offsets from a polyline through a curve ripple by the chord sagitta at
    every vertex, which a third difference turns into spurious jerk.
    """
    if g is None or lane_id not in g.lanes:
        return True
    cl = g.lanes[lane_id].centerline
    segs = {cl.segment_index(w.ego.offset) for w in win}
    return len(segs) == 1


def _jerk_kpi(trace, thresholds: KpiThresholds, g: Optional[MapGraph] = None) -> KpiResult:
    """Jerk of the lateral lane offset; windows spanning a lane switch or a reference vertex are skipped."""
    frames = trace.frames
    flags, values = [], []
    for i in range(len(frames)):
        if i < 3:
            flags.append(False)
            values.append(0.0)
            continue
        win = frames[i - 3:i + 1]
        lane = win[0].ego.lane
        if lane is None or any(w.ego.lane != lane for w in win) or not _straight_window(g, lane, win):
            flags.append(False)
            values.append(0.0)
            continue
        j = third_difference_jerk([w.ego.lateral for w in win], trace.dt)[0]
        values.append(j)
        flags.append(abs(j) > thresholds.lateral_jerk)
    events = []
    for a, b in _episodes(flags):
        peak = max(range(a, b), key=lambda k: abs(values[k]))
        events.append(KpiEvent(_r(frames[a].t), ("ego",), _r(values[peak])))
    return KpiResult(bool(events), events)


def route_progress_series(trace, scenario: ConcreteScenario, g: MapGraph) -> List[float]:
    """Monotone route-progress fraction per frame, from the ego lane annotations."""
    from .simcore import Route

    e = scenario.ego
    route = Route(g, e.route, e.start.offset, e.destination.offset)
    best = route.station(e.route[0], e.start.offset) or 0.0
    out = []
    for f in trace.frames:
        st = route.station(f.ego.lane, f.ego.offset)
        if st is not None and best < st < best + STATION_JUMP:
            best = st
        out.append(route.fraction(best))
    return out


def _route_kpi(trace, scenario: ConcreteScenario, g: MapGraph, thresholds: KpiThresholds) -> KpiResult:
    frames = trace.frames
    events = [KpiEvent(_r(frames[a].t), ("ego",), float(b - a)) for a, b in _episodes([f.ego.lane is None for f in frames])]
    cutoff = thresholds.arrival_budget
    arrived = trace.termination == "destination-reached" and (cutoff is None or frames[-1].t <= cutoff + 1e-9)
    k = None
    if not arrived:
        if cutoff is not None and frames[-1].t >= cutoff - 1e-9:
            k = max(i for i, f in enumerate(frames) if f.t <= cutoff + 1e-9)
        elif trace.termination == "budget":
            k = len(frames) - 1
    if k is not None:
        progress = route_progress_series(trace, scenario, g)[k]
        if progress < thresholds.route_progress_min:
            events.append(KpiEvent(_r(frames[k].t), ("ego",), _r(progress)))
    events.sort(key=lambda e: e.t)
    return KpiResult(bool(events), events)


def _signal_kpi(trace, g: MapGraph) -> KpiResult:
    events = []
    frames = trace.frames
    for prev, cur in zip(frames, frames[1:]):
        lane = g.lanes.get(cur.ego.lane) if cur.ego.lane is not None else None
        if lane is None or not lane.is_connector or not g.junctions[lane.junction].signalized:
            continue
        before = g.lanes.get(prev.ego.lane) if prev.ego.lane is not None else None
        if before is not None and before.is_connector:
            continue
        approach = g.lanes[lane.source].road
        if prev.signals.get(f"{lane.junction}:{approach}") == "red":
            events.append(KpiEvent(_r(cur.t), ("ego", f"{lane.junction}:{approach}"), 0.0))
    return KpiResult(bool(events), events)


def check_consistency(trace, scenario: ConcreteScenario) -> None:
    if trace.scenario_id != scenario.id:
        raise KpiError(f"trace is for scenario {trace.scenario_id!r}, not {scenario.id!r}")
    if not trace.frames:
        raise KpiError("trace has no frames")
    expected = ["ego"] + [n.id for n in scenario.npcs] + [p.id for p in scenario.pedestrians]
    for f in trace.frames:
        if [a.id for a in f.agents] != expected:
            raise KpiError(f"agent set at t={f.t} does not match the scenario")


def evaluate(trace, scenario: ConcreteScenario, thresholds: Optional[KpiThresholds] = None,
             g: Optional[MapGraph] = None) -> KpiReport:
    thresholds = thresholds or KpiThresholds()
    check_consistency(trace, scenario)
    if g is None:
        from .simcore import resolve_map

        g = resolve_map(scenario.map_ref)
    coll, close = _contact_kpis(trace, thresholds)
    brake, accel = _accel_kpis(trace, thresholds)
    results = {
        "collision": coll,
        "too-close": close,
        "harsh-brake": brake,
        "harsh-accel": accel,
        "lateral-jerk": _jerk_kpi(trace, thresholds, g),
        "route-deviation": _route_kpi(trace, scenario, g, thresholds),
        "signal-violation": _signal_kpi(trace, g),
    }
    return KpiReport(scenario.id, results, trace.termination)


def thresholds_dict(t: KpiThresholds) -> dict:
    return asdict(t)

"""Programmatic construction of map files, and the bundled fixture maps.

``python -m covdrive.mapbuild <dir>`` regenerates the JSON fixtures shipped in
``covdrive/data``.
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .geometry import heading_deg, wrap_deg


def _label(h_in: float, h_out: float) -> str:
    off = wrap_deg(h_out - (h_in + 180.0))
    if abs(off) <= 45.0:
        return "straight"
    if 45.0 < off <= 135.0:
        return "left"
    if -135.0 <= off < -45.0:
        return "right"
    return "u-turn"


class MapBuilder:
    def __init__(self, name: str):
        self.name = name
        self.roads: List[dict] = []
        self.junctions: Dict[str, dict] = {}
        self.crosswalks: List[dict] = []

    def road(self, rid: str, points: Sequence[Sequence[float]], fwd: int = 1, bwd: int = 1, width: float = 3.5,
             start: Optional[str] = None, end: Optional[str] = None, speed_limit: float = 11.0) -> "MapBuilder":
        lanes = []
        for i in range(fwd):
            lanes.append({
                "dir": "forward", "width": width,
                "left_boundary": ("solid-yellow" if bwd else "solid-white") if i == 0 else "dashed-white",
                "right_boundary": "solid-white" if i == fwd - 1 else "dashed-white",
            })
        for i in range(bwd):
            lanes.append({
                "dir": "backward", "width": width,
                "left_boundary": ("solid-yellow" if fwd else "solid-white") if i == 0 else "dashed-white",
                "right_boundary": "solid-white" if i == bwd - 1 else "dashed-white",
            })
        for i, lane in enumerate(lanes):
            lane["id"] = f"{rid}_{i}"
        self.roads.append({
            "id": rid, "centerline": [[float(x), float(y)] for x, y in points], "speed_limit": speed_limit,
            "lanes": lanes, "links": {"start": start, "end": end},
        })
        for ref in (start, end):
            if ref is not None:
                self.junctions.setdefault(ref, {"id": ref, "signalized": False})
        return self

    def junction(self, jid: str, signalized: bool = False, crosswalks: bool = False) -> "MapBuilder":
        self.junctions.setdefault(jid, {"id": jid})["signalized"] = signalized
        self.junctions[jid]["crosswalks"] = crosswalks
        return self

    def star(self, jid: str, center: Sequence[float], headings: Sequence[float], names: Sequence[str],
             arm: float = 120.0, inner: float = 10.0, fwd: int = 1, bwd: int = 1, **kw) -> "MapBuilder":
        """Junction whose roads radiate from ``center``; each road starts at the junction."""
        cx, cy = center
        for h, rid in zip(headings, names):
            ux, uy = math.cos(math.radians(h)), math.sin(math.radians(h))
            self.road(rid, [(cx + inner * ux, cy + inner * uy), (cx + (inner + arm) * ux, cy + (inner + arm) * uy)],
                      fwd=fwd, bwd=bwd, start=jid)
        return self.junction(jid, **kw)

    def _incident(self, jid: str) -> List[tuple]:
        out = []
        for r in self.roads:
            for end in ("start", "end"):
                if r["links"][end] == jid:
                    out.append((r, end))
        return out

    @staticmethod
    def _heading(road: dict, end: str) -> float:
        pts = road["centerline"]
        if end == "start":
            return heading_deg(pts[1][0] - pts[0][0], pts[1][1] - pts[0][1])
        return heading_deg(pts[-2][0] - pts[-1][0], pts[-2][1] - pts[-1][1])

    @staticmethod
    def _lanes(road: dict, end: str, incoming: bool) -> List[str]:
        fwd_in = end == "end"
        direction = "forward" if fwd_in == incoming else "backward"
        return [l["id"] for l in road["lanes"] if l["dir"] == direction]

    def build(self) -> dict:
        junctions = []
        for jid in sorted(self.junctions):
            meta = self.junctions[jid]
            inc = self._incident(jid)
            conns = []
            for ra, ea in inc:
                ins = self._lanes(ra, ea, incoming=True)
                if not ins:
                    continue
                for rb, eb in inc:
                    outs = self._lanes(rb, eb, incoming=False)
                    if not outs:
                        continue
                    if rb is ra:
                        label = "u-turn"
                    else:
                        label = _label(self._heading(ra, ea), self._heading(rb, eb))
                        if label == "u-turn":
                            continue
                    if label == "straight":
                        conns += [[ins[i], outs[i]] for i in range(min(len(ins), len(outs)))]
                    elif label in ("left", "u-turn"):
                        conns.append([ins[0], outs[0]])
                    else:
                        conns.append([ins[-1], outs[-1]])
            junctions.append({
                "id": jid, "incident": [{"road": r["id"], "end": e} for r, e in inc],
                "connections": conns, "signalized": bool(meta.get("signalized")),
            })
            if meta.get("crosswalks"):
                self.crosswalks += [{"junction": jid, "road": r["id"]} for r, _ in inc]
        return {"name": self.name, "roads": self.roads, "junctions": junctions, "crosswalks": self.crosswalks}


def t_junction() -> dict:
    return MapBuilder("t_junction").star("J1", (0, 0), [0, 90, 270], ["stem", "north", "south"]).build()


def y_junction() -> dict:
    return MapBuilder("y_junction").star("J1", (0, 0), [0, 120, 240], ["a", "b", "c"]).build()


def skewed_t_junction() -> dict:
    """Skewed T: gaps of 181.7, 90.1 and 88.2 degrees; road_117 lies left of road_115."""
    return MapBuilder("j5").star("J_5", (0, 0), [271.8, 0.0, 181.7], ["road_115", "road_116", "road_117"]).build()


def grid() -> dict:
    b = MapBuilder("grid")
    span = 200.0
    pos = {"G00": (0, 0), "G10": (span, 0), "G01": (0, span), "G11": (span, span)}
    inner = 10.0
    b.road("h0", [(inner, 0), (span - inner, 0)], start="G00", end="G10")
    b.road("h1", [(inner, span), (span - inner, span)], start="G01", end="G11")
    b.road("v0", [(0, inner), (0, span - inner)], start="G00", end="G01")
    b.road("v1", [(span, inner), (span, span - inner)], start="G10", end="G11")
    stubs = {"G00": [180, 270], "G10": [0, 270], "G01": [180, 90], "G11": [0, 90]}
    for jid, hs in stubs.items():
        cx, cy = pos[jid]
        for h in hs:
            ux, uy = round(math.cos(math.radians(h))), round(math.sin(math.radians(h)))
            b.road(f"{jid}_{h}", [(cx + inner * ux, cy + inner * uy), (cx + 130 * ux, cy + 130 * uy)], start=jid)
        b.junction(jid, signalized=True)
    return b.build()


def mixed() -> dict:
    b = MapBuilder("mixed")
    b.star("JT", (0, 0), [0, 90, 270], ["t_e", "t_n", "t_s"])
    b.star("JY", (500, 0), [0, 120, 240], ["y_a", "y_b", "y_c"])
    b.star("JX", (1000, 0), [0, 90, 180, 270], ["x_e", "x_n", "x_w", "x_s"], signalized=True, crosswalks=True)
    b.star("JK", (1500, 0), [0, 150, 255], ["k_a", "k_b", "k_c"])
    b.star("JF", (2000, 0), [271.8, 0.0, 181.7], ["f_115", "f_116", "f_117"], crosswalks=True)
    return b.build()


def two_lane_straight() -> dict:
    return MapBuilder("two_lane_straight").road("main", [(0, 0), (400, 0)], fwd=2, bwd=1).build()


def town() -> dict:
    """Signalized four-way A, a T-junction B east of it, and a separate three-lane straight road."""
    b = MapBuilder("town")
    inner = 12.0
    b.road("ab", [(inner, 0), (240 - inner, 0)], fwd=2, bwd=2, start="A", end="B")
    b.road("a_w", [(-inner, 0), (-170, 0)], fwd=2, bwd=2, start="A")
    b.road("a_n", [(0, inner), (0, 160)], start="A")
    b.road("a_s", [(0, -inner), (0, -160)], start="A")
    b.road("b_e", [(240 + inner, 0), (410, 0)], fwd=2, bwd=2, start="B")
    b.road("b_s", [(240, -inner), (240, -160)], start="B")
    b.junction("A", signalized=True, crosswalks=True)
    b.junction("B", crosswalks=True)
    b.road("hw", [(0, 300), (320, 300)], fwd=2, bwd=1)
    return b.build()


FIXTURES = {
    "t_junction": t_junction,
    "y_junction": y_junction,
    "j5": skewed_t_junction,
    "grid": grid,
    "mixed": mixed,
    "two_lane_straight": two_lane_straight,
    "town": town,
}


def write_fixtures(outdir) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    for name, fn in FIXTURES.items():
        (out / f"{name}.json").write_text(json.dumps(fn(), indent=1) + "\n")


if __name__ == "__main__":
    write_fixtures(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parent / "data" / "maps")

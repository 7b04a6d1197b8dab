"""Planar geometry: polylines with arc-length parametrization and oriented boxes."""

from __future__ import annotations

import bisect
import math
from typing import List, Sequence, Tuple

Point = Tuple[float, float]


def wrap_deg(a: float) -> float:
    """Wrap to (-180, 180]."""
    a = math.fmod(a, 360.0)
    if a <= -180.0:
        a += 360.0
    elif a > 180.0:
        a -= 360.0
    return a


def wrap_rad(a: float) -> float:
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a < 0:
        a += 2.0 * math.pi
    return a - math.pi


def heading_deg(dx: float, dy: float) -> float:
    return math.degrees(math.atan2(dy, dx)) % 360.0


class Polyline:
    """Piecewise-linear curve; lateral offsets are positive to the left."""

    __slots__ = ("xs", "ys", "cum", "length", "_ux", "_uy", "_seg")

    def __init__(self, points: Sequence[Sequence[float]]):
        pts = [(float(p[0]), float(p[1])) for p in points]
        if len(pts) < 2:
            raise ValueError("polyline needs at least 2 points")
        self.xs = [p[0] for p in pts]
        self.ys = [p[1] for p in pts]
        self.cum = [0.0]
        self._ux: List[float] = []
        self._uy: List[float] = []
        self._seg: List[float] = []
        for i in range(len(pts) - 1):
            dx, dy = self.xs[i + 1] - self.xs[i], self.ys[i + 1] - self.ys[i]
            seg = math.hypot(dx, dy)
            if seg <= 1e-9:
                raise ValueError("zero-length polyline segment")
            self._seg.append(seg)
            self._ux.append(dx / seg)
            self._uy.append(dy / seg)
            self.cum.append(self.cum[-1] + seg)
        self.length = self.cum[-1]

    @property
    def points(self) -> List[Point]:
        return list(zip(self.xs, self.ys))

    def _segment(self, s: float) -> int:
        i = bisect.bisect_right(self.cum, s) - 1
        return min(max(i, 0), len(self._seg) - 1)

    def point_at(self, s: float) -> Tuple[float, float, float]:
        """(x, y, heading rad) at arc length ``s``; extrapolates linearly past the ends."""
        i = self._segment(s)
        ds = s - self.cum[i]
        ux, uy = self._ux[i], self._uy[i]
        return self.xs[i] + ux * ds, self.ys[i] + uy * ds, math.atan2(uy, ux)

    def heading_at(self, s: float) -> float:
        i = self._segment(s)
        return math.atan2(self._uy[i], self._ux[i])

    def project(self, x: float, y: float) -> Tuple[float, float]:
        """(arc length, signed lateral offset) of the closest point."""
        best_d2 = math.inf
        best_s = 0.0
        best_lat = 0.0
        n = len(self._seg)
        for i in range(n):
            px, py = x - self.xs[i], y - self.ys[i]
            ux, uy = self._ux[i], self._uy[i]
            t = px * ux + py * uy
            seg = self._seg[i]
            if t < 0.0 and i > 0:
                t = 0.0
            elif t > seg and i < n - 1:
                t = seg
            lat = ux * py - uy * px
            along = px - t * ux, py - t * uy
            d2 = along[0] * along[0] + along[1] * along[1]
            if d2 < best_d2 - 1e-12:
                best_d2 = d2
                best_s = self.cum[i] + t
                best_lat = lat
        return best_s, best_lat

    def segment_index(self, s: float) -> int:
        return self._segment(s)

    def offset(self, d: float) -> "Polyline":
        """Parallel curve at lateral distance ``d`` (miter joins)."""
        if d == 0.0:
            return Polyline(self.points)
        n = len(self.xs)
        out = []
        for i in range(n):
            if i == 0:
                nx, ny = -self._uy[0], self._ux[0]
                scale = 1.0
            elif i == n - 1:
                nx, ny = -self._uy[-1], self._ux[-1]
                scale = 1.0
            else:
                ax, ay = -self._uy[i - 1], self._ux[i - 1]
                bx, by = -self._uy[i], self._ux[i]
                nx, ny = ax + bx, ay + by
                norm = math.hypot(nx, ny)
                nx, ny = nx / norm, ny / norm
                scale = 1.0 / max(nx * bx + ny * by, 0.2)
            out.append((self.xs[i] + nx * d * scale, self.ys[i] + ny * d * scale))
        return Polyline(out)

    def reversed(self) -> "Polyline":
        return Polyline(self.points[::-1])

    def transformed(self, angle: float, tx: float, ty: float) -> "Polyline":
        c, s = math.cos(angle), math.sin(angle)
        return Polyline([(c * x - s * y + tx, s * x + c * y + ty) for x, y in self.points])


def bezier(p0: Point, p1: Point, p2: Point, p3: Point, n: int = 24) -> List[Point]:
    pts = []
    for i in range(n + 1):
        t = i / n
        a, b, c, e = (1 - t) ** 3, 3 * (1 - t) ** 2 * t, 3 * (1 - t) * t * t, t ** 3
        pts.append((a * p0[0] + b * p1[0] + c * p2[0] + e * p3[0], a * p0[1] + b * p1[1] + c * p2[1] + e * p3[1]))
    return pts


def box_corners(x: float, y: float, heading: float, length: float, width: float) -> List[Point]:
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = length / 2.0, width / 2.0
    return [
        (x + c * hl - s * hw, y + s * hl + c * hw),
        (x + c * hl + s * hw, y + s * hl - c * hw),
        (x - c * hl + s * hw, y - s * hl - c * hw),
        (x - c * hl - s * hw, y - s * hl + c * hw),
    ]


def _axes(corners: Sequence[Point]) -> List[Point]:
    out = []
    for i in range(2):
        ex = corners[i + 1][0] - corners[i][0]
        ey = corners[i + 1][1] - corners[i][1]
        n = math.hypot(ex, ey)
        out.append((-ey / n, ex / n))
    return out


def boxes_overlap(a: Sequence[Point], b: Sequence[Point]) -> bool:
    """Separating-axis test for two convex quadrilaterals (touching counts as overlap)."""
    for ax, ay in _axes(a) + _axes(b):
        pa = [x * ax + y * ay for x, y in a]
        pb = [x * ax + y * ay for x, y in b]
        if max(pa) < min(pb) or max(pb) < min(pa):
            return False
    return True


def _point_segment_distance(p: Point, a: Point, b: Point) -> float:
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    px, py = p[0] - ax, p[1] - ay
    L2 = dx * dx + dy * dy
    t = 0.0 if L2 == 0 else max(0.0, min(1.0, (px * dx + py * dy) / L2))
    return math.hypot(px - t * dx, py - t * dy)


def box_distance(a: Sequence[Point], b: Sequence[Point]) -> float:
    """Surface-to-surface distance; 0 when the boxes overlap."""
    if boxes_overlap(a, b):
        return 0.0
    best = math.inf
    for p, poly in ((p, b) for p in a):
        for i in range(4):
            best = min(best, _point_segment_distance(p, poly[i], poly[(i + 1) % 4]))
    for p in b:
        for i in range(4):
            best = min(best, _point_segment_distance(p, a[i], a[(i + 1) % 4]))
    return best

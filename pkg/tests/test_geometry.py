import math

import numpy as np
import pytest

from covdrive.geometry import Polyline, box_corners, box_distance, boxes_overlap, wrap_deg


def test_polyline_projection_and_offset_sign():
    pl = Polyline([(0, 0), (10, 0), (10, 10)])
    assert pl.length == pytest.approx(20.0)
    s, d = pl.project(5, 2)
    assert (s, d) == pytest.approx((5, 2))
    s, d = pl.project(12, 5)
    assert (s, d) == pytest.approx((15, -2))
    x, y, h = pl.point_at(15)
    assert (x, y, h) == pytest.approx((10, 5, math.pi / 2))


def test_degenerate_polyline_rejected():
    with pytest.raises(ValueError):
        Polyline([(0, 0), (0, 0)])
    with pytest.raises(ValueError):
        Polyline([(0, 0)])


def test_offset_is_parallel():
    pl = Polyline([(0, 0), (10, 0), (20, 5)])
    off = pl.offset(1.5)
    for s in np.linspace(0.5, off.length - 0.5, 20):
        x, y, _ = off.point_at(s)
        assert pl.project(x, y)[1] == pytest.approx(1.5, abs=1e-6)


def test_wrap():
    assert wrap_deg(190) == pytest.approx(-170)
    assert wrap_deg(-190) == pytest.approx(170)


def test_box_overlap_and_distance():
    a = box_corners(0, 0, 0, 4, 2)
    assert boxes_overlap(a, box_corners(3.9, 0, 0, 4, 2))
    far = box_corners(5, 0, 0, 4, 2)
    assert not boxes_overlap(a, far)
    assert box_distance(a, far) == pytest.approx(1.0)
    rotated = box_corners(0, 2.0, math.pi / 4, 2, 2)
    assert boxes_overlap(a, rotated)
    assert box_distance(a, box_corners(0, 3.5, 0, 4, 2)) == pytest.approx(1.5)


def test_sat_matches_sampling():
    rng = np.random.default_rng(3)
    for _ in range(200):
        a = box_corners(0, 0, rng.uniform(-3, 3), 4.6, 1.9)
        b = box_corners(*rng.uniform(-6, 6, 2), rng.uniform(-3, 3), 4.6, 1.9)
        # sample points of b and test membership in a
        us, vs = np.meshgrid(np.linspace(0, 1, 25), np.linspace(0, 1, 25))
        p0, p1, _, p3 = (np.array(c) for c in b)
        pts = p0 + us[..., None] * (p1 - p0) + vs[..., None] * (p3 - p0)
        a0, a1, _, a3 = (np.array(c) for c in a)
        e1, e2 = a1 - a0, a3 - a0
        rel = pts - a0
        t1 = rel @ e1 / (e1 @ e1)
        t2 = rel @ e2 / (e2 @ e2)
        inside = ((t1 >= 0) & (t1 <= 1) & (t2 >= 0) & (t2 <= 1)).any()
        if inside:
            assert boxes_overlap(a, b)
        if not boxes_overlap(a, b):
            assert box_distance(a, b) > 0

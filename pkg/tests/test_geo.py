import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gbpl.errors import DegenerateGeometryError, InvalidInputError
from gbpl.geo import (
    GeoPoint,
    LocalPoint,
    angle_diff,
    circular_mean,
    haversine,
    heading_between,
    project,
    unproject,
    wrap_angle,
    wrap_array,
)

O = GeoPoint(41.88, -87.63)


def test_origin_maps_to_origin():
    p = project(O, O)
    assert p.x == 0.0 and p.y == 0.0


def test_meridian_arc_length():
    p = project(O, GeoPoint(O.lat + 0.001, O.lon))
    # arc length of 0.001 degree on the mean-radius sphere
    assert p.x == pytest.approx(0.0, abs=1e-9)
    assert p.y == pytest.approx(6371008.8 * math.radians(0.001), rel=1e-9)
    assert p.y == pytest.approx(111.2, abs=0.05)


def test_round_trip():
    g = GeoPoint(41.9, -87.6)
    back = unproject(O, project(O, g))
    assert back.lat == pytest.approx(g.lat, abs=1e-9)
    assert back.lon == pytest.approx(g.lon, abs=1e-9)


def test_out_of_range_coordinates_rejected():
    with pytest.raises(InvalidInputError):
        GeoPoint(91.0, 0.0)
    with pytest.raises(InvalidInputError):
        LocalPoint(float("nan"), 0.0)


@settings(max_examples=200, deadline=None)
@given(
    lat=st.floats(-60, 60),
    lon=st.floats(-179, 179),
    dist=st.floats(10.0, 10_000.0),
    bearing=st.floats(0, 2 * math.pi),
)
def test_projection_matches_haversine(lat, lon, dist, bearing):
    origin = GeoPoint(lat, lon)
    target = unproject(origin, LocalPoint(dist * math.sin(bearing), dist * math.cos(bearing)))
    p = project(origin, target)
    assert math.hypot(p.x, p.y) == pytest.approx(haversine(origin, target), rel=1e-3)


@pytest.mark.parametrize("a,expected", [(3 * math.pi, math.pi), (-math.pi, math.pi), (0.3, 0.3)])
def test_wrap_examples(a, expected):
    assert wrap_angle(a) == pytest.approx(expected, abs=1e-12)


def test_wrap_non_finite():
    with pytest.raises(InvalidInputError):
        wrap_angle(float("inf"))


@given(st.floats(-100, 100), st.integers(-20, 20))
def test_wrap_periodic_and_idempotent(a, k):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    assert wrap_angle(w) == w
    assert abs(angle_diff(wrap_angle(a + 2 * math.pi * k), w)) < 1e-9


def test_wrap_array_matches_scalar():
    a = np.linspace(-20, 20, 1001)
    np.testing.assert_allclose(wrap_array(a), [wrap_angle(x) for x in a], atol=1e-12)
    assert wrap_array(-math.pi) == pytest.approx(math.pi)


def test_heading_examples():
    z = LocalPoint(0, 0)
    assert heading_between(z, LocalPoint(0, 1)) == 0.0
    assert heading_between(z, LocalPoint(1, 0)) == pytest.approx(math.pi / 2)
    assert heading_between(z, LocalPoint(-1, -1)) == pytest.approx(-3 * math.pi / 4)
    with pytest.raises(DegenerateGeometryError):
        heading_between(z, z)


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_heading_reversal(ax, ay, bx, by):
    a, b = LocalPoint(ax, ay), LocalPoint(bx, by)
    if math.hypot(ax - bx, ay - by) < 1e-6:
        return
    assert abs(angle_diff(heading_between(a, b), wrap_angle(heading_between(b, a) + math.pi))) < 1e-9


def test_circular_mean_across_branch_cut():
    assert abs(angle_diff(circular_mean([math.pi - 0.01, -math.pi + 0.01]), math.pi)) < 1e-12

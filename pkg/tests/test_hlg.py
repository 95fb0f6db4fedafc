import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gbpl.errors import DegenerateGeometryError, InvalidInputError, NotFoundError, UndefinedEntropyError
from gbpl.geo import GeoPoint, angle_diff, wrap_angle
from gbpl.hlg import (
    build_hlg,
    entropy_from_counts,
    fit_orientation,
    hlg_from_json,
    hlg_to_json,
    joint_entropy,
    segment_roads,
    straight_paths,
)
from gbpl.map_model import road_map_from_local

O = GeoPoint(41.88, -87.63)


def _map(roads, sigma_g=10.0, oneway=None):
    return road_map_from_local({k: np.asarray(v, float) for k, v in roads.items()}, O, sigma_g, oneway)


def _mc_heading_var(points, sigma, trials, rng):
    pts = points[None, :, :] + rng.normal(0, sigma, (trials, *points.shape))
    r = pts - pts.mean(axis=1, keepdims=True)
    s = np.einsum("tni,tnj->tij", r, r)
    _, v = np.linalg.eigh(s)
    u = v[:, :, 1]
    ref = points[-1] - points[0]
    u *= np.sign(u @ ref)[:, None]
    theta = np.arctan2(u[:, 0], u[:, 1])
    mean = math.atan2(*ref)
    d = (theta - mean + math.pi) % (2 * math.pi) - math.pi
    return float(np.var(d))


# ------------------------------------------------------------ segmentation


def test_straight_road_single_segment():
    m = _map({"a": [[0, 20 * i] for i in range(10)]})
    segs = segment_roads(m)
    assert len(segs) == 1
    assert segs[0].kind == "straight" and len(segs[0].points) == 10


def test_l_shape_two_straights_and_corner():
    pts = [[0, y] for y in range(0, 201, 20)] + [[x, 200] for x in range(20, 201, 20)]
    m = _map({"L": pts})
    segs = segment_roads(m)
    assert [s.kind for s in segs] == ["straight", "curve", "straight"]
    corner = segs[1].points[0]
    assert np.allclose(corner, m.local_points(m.roads[0])[10], atol=1e-6)
    # oracle: the two arms recomputed from the construction
    assert (segs[0].start, segs[0].end) == (0, 10)
    assert (segs[2].start, segs[2].end) == (10, 20)


def test_junction_splits_road():
    m = _map({"a": [[0, 20 * i] for i in range(11)], "b": [[-100, 100], [0, 100], [100, 100]]})
    segs = [s for s in segment_roads(m) if s.road_id == "a"]
    assert [(s.start, s.end) for s in segs] == [(0, 5), (5, 10)]


def _partition_ok(m):
    segs = segment_roads(m)
    for road in m.roads:
        xy = m.local_points(road)
        parts = [s for s in segs if s.road_id == road.id and s.kind == "straight"]
        out = [parts[0].points[0]]
        for s in parts:
            assert np.array_equal(s.points[0], out[-1])
            out.extend(s.points[1:])
        assert np.array_equal(np.array(out), xy)


def test_partition_property_random_polylines():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n = rng.integers(3, 30)
        steps = rng.uniform(10, 30, n)
        turns = np.cumsum(rng.choice([0, 0, 0, rng.uniform(-1.5, 1.5)], n))
        xy = np.concatenate([[[0, 0]], np.cumsum(np.column_stack([steps * np.sin(turns), steps * np.cos(turns)]), axis=0)])
        _partition_ok(_map({"r": xy}))


# --------------------------------------------------------- orientation fit


def test_fit_two_points_north():
    theta, _ = fit_orientation(np.array([[0, 0], [0, 100.0]]), 10)
    assert theta == 0.0


def test_fit_east_variance_matches_monte_carlo():
    pts = np.array([[25.0 * i, 0.0] for i in range(5)])
    theta, var = fit_orientation(pts, 5.0)
    assert theta == pytest.approx(math.pi / 2)
    mc = _mc_heading_var(pts, 5.0, 10_000, np.random.default_rng(0))
    assert abs(var - mc) / mc < 0.15


def test_fit_zigzag_symmetric():
    pts = np.array([[i * 20.0, (-1) ** i * 0.5] for i in range(11)])
    theta, _ = fit_orientation(pts, 10)
    assert abs(theta - math.pi / 2) < 1e-3


def test_fit_coincident_points():
    with pytest.raises(DegenerateGeometryError):
        fit_orientation(np.zeros((4, 2)), 10)


def test_fit_variance_oracle_randomized():
    rng = np.random.default_rng(42)
    for _ in range(12):
        length = rng.uniform(100, 1000)
        n = int(rng.integers(5, 51))
        sigma = float(rng.choice([5.0, 10.0]))
        heading = rng.uniform(-math.pi, math.pi)
        s = np.linspace(0, length, n)
        pts = np.column_stack([s * math.sin(heading), s * math.cos(heading)])
        theta, var = fit_orientation(pts, sigma)
        assert abs(angle_diff(theta, heading)) < 1e-9
        mc = _mc_heading_var(pts, sigma, 10_000, rng)
        assert abs(var - mc) / mc < 0.15, (length, n, sigma, var, mc)


# -------------------------------------------------------------- graph build


def test_single_road_graph():
    g = build_hlg(_map({"a": [[0, 0], [300, 400]]}), t_l=100)
    assert len(g.vertices) == 2
    fwd, rev = g.vertices
    assert fwd.d_mean == pytest.approx(500, abs=1e-6)
    assert fwd.long and rev.long
    assert fwd.theta_mean == pytest.approx(math.atan2(300, 400))
    assert abs(angle_diff(rev.theta_mean, wrap_angle(fwd.theta_mean + math.pi))) < 1e-12
    assert rev.d_mean == fwd.d_mean
    assert all(v.d_var == pytest.approx(200.0) for v in g.vertices)


def test_short_stub_not_long():
    g = build_hlg(_map({"a": [[0, 0], [0, 80]]}), t_l=100)
    assert g.long_index == []
    assert all(not v.long for v in g.vertices)


def test_oneway_single_direction():
    g = build_hlg(_map({"a": [[0, 0], [0, 300]]}, oneway={"a": True}))
    assert len(g.vertices) == 1


def test_empty_map_empty_graph():
    g = build_hlg(_map({}))
    assert g.vertices == [] and g.edges == []


def _grid(n=4, pitch=150.0, jitter=0.0, seed=0):
    rng = np.random.default_rng(seed)
    nodes = np.stack(np.meshgrid(np.arange(n) * pitch, np.arange(n) * pitch, indexing="ij"), -1)
    nodes = nodes + rng.uniform(-jitter, jitter, nodes.shape)
    roads = {}
    for i in range(n):
        roads[f"c{i}"] = nodes[i, :, :]
        roads[f"r{i}"] = nodes[:, i, :]
    return _map(roads, sigma_g=5.0)


def test_graph_invariants_on_grid():
    g = build_hlg(_grid(jitter=20.0, seed=1), t_l=100)
    for v in g.vertices:
        assert v.d_mean == pytest.approx(float(np.hypot(*(v.points[-1] - v.points[0]))), abs=1e-6)
        assert v.long == (v.d_mean > g.t_l)
        if v.long:
            assert v.theta_var > 0
        if v.twin is not None:
            t = g.vertices[v.twin]
            assert abs(angle_diff(t.theta_mean, wrap_angle(v.theta_mean + math.pi))) < 1e-9
            assert t.d_mean == v.d_mean
    for e in g.edges:
        assert e.kind in ("intersection", "curve")
        a, b = g.vertices[e.src], g.vertices[e.dst]
        assert e.delta_theta == pytest.approx(wrap_angle(b.theta_mean - a.theta_mean))
        assert e.dst != a.twin


def test_intersection_edges_join_incoming_and_outgoing():
    g = build_hlg(_map({"a": [[0, -150], [0, 0], [0, 150]], "b": [[-150, 0], [0, 0], [150, 0]]}))
    assert len(g.vertices) == 8
    inter = [e for e in g.edges if e.kind == "intersection"]
    # four incoming arms, three continuations each (no U-turn)
    assert len(inter) == 12


# ------------------------------------------------------------ straight paths


def _collinear_three(gap=0.0):
    roads = {
        "a": [[0, 0], [0, 150]],
        "b": [[0, 150 + gap], [0, 300 + gap]],
        "c": [[0, 300 + 2 * gap], [0, 450 + 2 * gap]],
        "x": [[-100, 150], [0, 150], [100, 150]],
    }
    return build_hlg(_map(roads), t_l=100)


def test_straight_paths_collinear_chain():
    g = _collinear_three()
    start = next(v.id for v in g.vertices if v.road_id == "a" and v.forward)
    paths = straight_paths(g, start)
    names = [[g.vertices[i].road_id for i in p.vertices] for p in paths]
    assert names == [["a"], ["a", "b"], ["a", "b", "c"]]
    assert [p.d_mean for p in paths] == pytest.approx([150, 300, 450], abs=1e-6)
    assert all(p.d_var == pytest.approx(200.0) for p in paths)
    # inverse-variance aggregate of equal variances halves, then thirds
    v0 = g.vertices[start].theta_var
    assert [p.theta_var for p in paths] == pytest.approx([v0, v0 / 2, v0 / 3])


def test_straight_paths_turn_excluded():
    g = _collinear_three()
    start = next(v.id for v in g.vertices if v.road_id == "a" and v.forward)
    for p in straight_paths(g, start):
        assert all(g.vertices[i].road_id != "x" for i in p.vertices)


def test_straight_paths_isolated():
    g = build_hlg(_map({"a": [[0, 0], [0, 300]]}))
    (p,) = straight_paths(g, 0)
    assert p.vertices == (0,)
    assert p.d_mean == pytest.approx(300)
    assert p.theta_mean == g.vertices[0].theta_mean


def test_straight_paths_unknown_vertex():
    g = build_hlg(_map({"a": [[0, 0], [0, 300]]}))
    with pytest.raises(NotFoundError):
        straight_paths(g, 99)


def test_straight_paths_require_long_start():
    g = build_hlg(_map({"a": [[0, 0], [0, 50]]}))
    with pytest.raises(InvalidInputError):
        straight_paths(g, 0)


# ------------------------------------------------------------------ entropy


def test_entropy_identical_vertices_zero():
    g = build_hlg(_map({f"r{i}": [[400 * i, 0], [400 * i, 250]] for i in range(5)}, ), t_l=100)
    # forward and reverse directions occupy two bins
    rep = joint_entropy(g)
    assert rep.histogram.sum() == 10
    assert rep.joint_entropy == pytest.approx(math.log(2) / math.log(1440))
    g1 = build_hlg(_map({f"r{i}": [[400 * i, 0], [400 * i, 250]] for i in range(5)}, oneway={f"r{i}": True for i in range(5)}))
    assert joint_entropy(g1).joint_entropy == 0.0


def test_entropy_formula_examples():
    assert entropy_from_counts(np.ones(1440), 1440) == pytest.approx(1.0)
    two = np.zeros(1440)
    two[[3, 700]] = 5
    assert entropy_from_counts(two, 1440) == pytest.approx(0.0953, abs=1e-4)


def test_entropy_empty_raises():
    with pytest.raises(UndefinedEntropyError):
        joint_entropy(build_hlg(_map({"a": [[0, 0], [0, 50]]})))


def test_entropy_overflow_bin():
    g = build_hlg(_map({"a": [[0, 0], [0, 2000]]}, oneway={"a": True}))
    rep = joint_entropy(g)
    assert rep.histogram.shape == (72, 20)
    assert rep.histogram[0, 19] == 1


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 50), min_size=1, max_size=40), st.data())
def test_entropy_monotone_under_split(counts, data):
    hist = np.zeros(200)
    hist[: len(counts)] = counts
    h0 = entropy_from_counts(hist, 200)
    assert 0.0 <= h0 <= 1.0
    i = data.draw(st.integers(0, len(counts) - 1))
    if hist[i] < 2:
        return
    moved = data.draw(st.integers(1, int(hist[i]) - 1))
    split = hist.copy()
    split[i] -= moved
    split[len(counts) + 10] += moved
    assert entropy_from_counts(split, 200) >= h0 - 1e-12


def test_json_round_trip():
    g = build_hlg(_grid(jitter=15.0, seed=3))
    text = hlg_to_json(g)
    g2 = hlg_from_json(text)
    assert hlg_to_json(g2) == text
    assert len(g2.vertices) == len(g.vertices) and len(g2.edges) == len(g.edges)

import json
import random

import numpy as np
import pytest

from gbpl.errors import ParseError
from gbpl.geo import GeoPoint
from gbpl.map_model import (
    dump_geojson,
    find_intersections,
    load_geojson,
    road_map_from_local,
)

O = GeoPoint(41.88, -87.63)


def _doc(features, props=None):
    doc = {"type": "FeatureCollection", "features": features}
    if props:
        doc["properties"] = props
    return json.dumps(doc).encode()


def _line(fid, coords):
    return {"type": "Feature", "id": fid, "properties": {}, "geometry": {"type": "LineString", "coordinates": coords}}


def test_load_counts_and_default_sigma():
    f1 = _line("a", [[-87.63 + i * 1e-4, 41.88] for i in range(5)])
    f2 = _line("b", [[-87.63, 41.88 + i * 1e-4] for i in range(5)])
    m = load_geojson(_doc([f1, f2]))
    assert len(m.roads) == 2
    assert m.n_waypoints == 10
    assert m.sigma_g == 10.0


def test_single_point_line_names_feature():
    with pytest.raises(ParseError, match="bad-road"):
        load_geojson(_doc([_line("bad-road", [[0.0, 0.0]])]))


@pytest.mark.parametrize("text", [b"{not json", b'{"type": "Feature"}'])
def test_malformed_documents(text):
    with pytest.raises(ParseError):
        load_geojson(text)


def test_non_linestring_rejected():
    feat = {"type": "Feature", "id": "pt", "geometry": {"type": "Point", "coordinates": [0, 0]}}
    with pytest.raises(ParseError, match="pt"):
        load_geojson(_doc([feat]))


def test_round_trip_lossless():
    rng = np.random.default_rng(3)
    feats = [_line(f"r{i}", [[-87.6 + x, 41.9 + y] for x, y in rng.uniform(-0.01, 0.01, (6, 2))]) for i in range(4)]
    m = load_geojson(_doc(feats, {"sigma_g": 5.0, "origin": [41.9, -87.6]}))
    m2 = load_geojson(dump_geojson(m))
    assert m2.sigma_g == 5.0 and m2.origin == m.origin
    for r1, r2 in zip(m.roads, m2.roads):
        for p, q in zip(r1.points, r2.points):
            assert abs(p.lat - q.lat) < 1e-9 and abs(p.lon - q.lon) < 1e-9


def test_shared_waypoint_gives_one_intersection():
    m = road_map_from_local({"a": [[-100, 0], [0, 0], [100, 0]], "b": [[0, -100], [0, 0], [0, 100]]}, O)
    its = find_intersections(m)
    assert len(its) == 1
    assert its[0].position.x == pytest.approx(0, abs=1e-3)
    assert {rid for rid, _ in its[0].incident} == {"a", "b"}


def test_parallel_roads_do_not_intersect():
    m = road_map_from_local({"a": [[0, 0], [200, 0]], "b": [[0, 100], [200, 100]]}, O)
    assert find_intersections(m) == []


def test_near_miss_clustered_at_centroid():
    a = np.array([[-40, 0], [-20, 0], [0, 0], [20, 0], [40, 0]], float)
    b = np.array([[1.5, -40], [1.5, -20], [1.5, 0], [1.5, 20], [1.5, 40]], float)
    m = road_map_from_local({"a": a, "b": b}, O)
    its = find_intersections(m, snap_radius=2.0)
    # brute-force oracle: every cross-road pair within the radius
    pa, pb = m.local_points(m.roads[0]), m.local_points(m.roads[1])
    close = [(i, j) for i in range(len(pa)) for j in range(len(pb)) if np.hypot(*(pa[i] - pb[j])) <= 2.0]
    assert close == [(2, 2)]
    c = (pa[2] + pb[2]) / 2
    assert len(its) == 1
    assert its[0].position.x == pytest.approx(c[0], abs=2e-3)
    assert its[0].position.y == pytest.approx(c[1], abs=2e-3)


def test_intersections_invariant_to_road_order():
    rng = random.Random(0)
    roads = {f"r{i}": [[0, 30 * i], [300, 30 * i]] for i in range(5)}
    roads.update({f"c{i}": [[60 * i, -10] , [60 * i, 0], [60 * i, 30], [60 * i, 60], [60 * i, 90], [60 * i, 120]] for i in range(5)})
    items = list(roads.items())
    ref = find_intersections(road_map_from_local(dict(items), O))
    for _ in range(5):
        rng.shuffle(items)
        assert find_intersections(road_map_from_local(dict(items), O)) == ref


def test_dense_waypoints_of_one_road_are_not_junctions():
    xy = np.column_stack([np.arange(0, 20, 1.0), np.zeros(20)])
    m = road_map_from_local({"a": xy}, O)
    assert find_intersections(m) == []

"""Prior road map ingestion and junction detection."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidInputError, ParseError
from .geo import GeoPoint, LocalPoint, project_arrays, unproject_arrays

DEFAULT_SIGMA_G = 10.0
DEFAULT_SNAP_RADIUS = 2.0


@dataclass(frozen=True)
class Road:
    id: str
    points: tuple[GeoPoint, ...]
    oneway: bool = False

    def __post_init__(self):
        if len(self.points) < 2:
            raise InvalidInputError(f"road {self.id!r} needs at least 2 points")
        for a, b in zip(self.points, self.points[1:]):
            if a == b:
                raise InvalidInputError(f"road {self.id!r} has repeated consecutive points")


@dataclass
class RoadMap:
    roads: list[Road]
    origin: GeoPoint
    sigma_g: float = DEFAULT_SIGMA_G
    _local: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.sigma_g > 0:
            raise InvalidInputError("sigma_g must be positive")

    def local_points(self, road: Road) -> np.ndarray:
        """(N, 2) array of the road's waypoints in the local plane (cached)."""
        arr = self._local.get(road.id)
        if arr is None:
            lat = [p.lat for p in road.points]
            lon = [p.lon for p in road.points]
            x, y = project_arrays(self.origin, lat, lon)
            arr = np.column_stack([x, y])
            self._local[road.id] = arr
        return arr

    @property
    def n_waypoints(self) -> int:
        return sum(len(r.points) for r in self.roads)


@dataclass(frozen=True)
class Intersection:
    position: LocalPoint
    incident: tuple[tuple[str, int], ...]


def _feature_id(feature, index):
    fid = feature.get("id") if isinstance(feature, dict) else None
    if fid is None and isinstance(feature, dict):
        fid = (feature.get("properties") or {}).get("id")
    return str(fid) if fid is not None else f"#{index}"


def load_geojson(data) -> RoadMap:
    """Parse a FeatureCollection of LineStrings into a RoadMap.

    Optional top-level ``properties`` may carry ``origin`` ([lat, lon]) and
    ``sigma_g``. Coordinates follow GeoJSON order, i.e. [lon, lat].
    """
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"malformed JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise ParseError("document is not a FeatureCollection")
    features = doc.get("features")
    if not isinstance(features, list):
        raise ParseError("FeatureCollection has no feature list")

    roads = []
    seen = set()
    for i, feat in enumerate(features):
        fid = _feature_id(feat, i)
        geom = feat.get("geometry") if isinstance(feat, dict) else None
        if not isinstance(geom, dict) or geom.get("type") != "LineString":
            raise ParseError("geometry is not a LineString", fid)
        coords = geom.get("coordinates")
        if not isinstance(coords, list) or len(coords) < 2:
            raise ParseError("LineString needs at least 2 points", fid)
        if fid in seen:
            raise ParseError("duplicate feature id", fid)
        seen.add(fid)
        props = feat.get("properties") or {}
        try:
            pts = tuple(GeoPoint(float(c[1]), float(c[0])) for c in coords)
            road = Road(fid, pts, bool(props.get("oneway", False)))
        except (TypeError, ValueError, IndexError) as exc:
            raise ParseError(str(exc), fid) from exc
        roads.append(road)

    props = doc.get("properties") or {}
    sigma_g = float(props.get("sigma_g", DEFAULT_SIGMA_G))
    if "origin" in props:
        lat, lon = props["origin"]
        origin = GeoPoint(float(lat), float(lon))
    elif roads:
        lats = [p.lat for r in roads for p in r.points]
        lons = [p.lon for r in roads for p in r.points]
        origin = GeoPoint(float(np.mean(lats)), float(np.mean(lons)))
    else:
        origin = GeoPoint(0.0, 0.0)
    try:
        return RoadMap(roads, origin, sigma_g)
    except InvalidInputError as exc:
        raise ParseError(str(exc)) from exc


def dump_geojson(road_map: RoadMap) -> str:
    """Serialize a RoadMap; `load_geojson(dump_geojson(m))` reproduces it."""
    features = []
    for road in road_map.roads:
        features.append({
            "type": "Feature",
            "id": road.id,
            "properties": {"oneway": road.oneway},
            "geometry": {
                "type": "LineString",
                "coordinates": [[p.lon, p.lat] for p in road.points],
            },
        })
    doc = {
        "type": "FeatureCollection",
        "properties": {
            "origin": [road_map.origin.lat, road_map.origin.lon],
            "sigma_g": road_map.sigma_g,
        },
        "features": features,
    }
    return json.dumps(doc, indent=None, sort_keys=True)


def road_map_from_local(roads_xy, origin: GeoPoint, sigma_g=DEFAULT_SIGMA_G, oneway=None) -> RoadMap:
    """Build a RoadMap from local-plane polylines ({id: (N, 2) array})."""
    roads = []
    for rid, xy in roads_xy.items():
        xy = np.asarray(xy, dtype=float)
        lat, lon = unproject_arrays(origin, xy[:, 0], xy[:, 1])
        pts = tuple(GeoPoint(float(a), float(b)) for a, b in zip(lat, lon))
        roads.append(Road(str(rid), pts, bool(oneway and oneway.get(rid, False))))
    return RoadMap(roads, origin, sigma_g)


def find_intersections(road_map: RoadMap, snap_radius: float = DEFAULT_SNAP_RADIUS) -> list[Intersection]:
    """Cluster waypoints of different roads that lie within `snap_radius`.

    Clusters are single-linkage over all waypoint pairs closer than the
    radius; a cluster is kept when it touches at least two roads, or a single
    road in a way that yields three or more branch directions.
    """
    if not snap_radius > 0:
        raise InvalidInputError("snap_radius must be positive")
    if not road_map.roads:
        return []
    # canonical road order makes the result independent of the input order
    roads = sorted(road_map.roads, key=lambda r: r.id)
    owners = []
    chunks = []
    arc = []
    for road in roads:
        xy = road_map.local_points(road)
        chunks.append(xy)
        arc.append(np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(xy, axis=0).T))]))
        owners.extend((road.id, i, len(xy)) for i in range(len(xy)))
    pts = np.vstack(chunks)
    arc = np.concatenate(arc)
    tree = cKDTree(pts)
    pairs = tree.query_pairs(snap_radius, output_type="ndarray")
    if len(pairs):
        # waypoints of one road that are close along the road itself are not a junction
        same = np.array([owners[i][0] == owners[j][0] for i, j in pairs], dtype=bool)
        near_along = np.abs(arc[pairs[:, 0]] - arc[pairs[:, 1]]) <= 3.0 * snap_radius
        pairs = pairs[~(same & near_along)]

    parent = np.arange(len(pts))

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    for i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    clusters: dict[int, list[int]] = {}
    for k in np.unique(pairs):
        clusters.setdefault(find(k), []).append(int(k))

    out = []
    for members in clusters.values():
        incident = sorted({(owners[k][0], owners[k][1]) for k in members})
        road_ids = {rid for rid, _ in incident}
        if len(road_ids) < 2 and _branch_count(members, owners) < 3:
            continue
        c = np.round(pts[members].mean(axis=0), 3)
        out.append(Intersection(LocalPoint(float(c[0]), float(c[1])), tuple(incident)))
    out.sort(key=lambda it: (it.position.x, it.position.y))
    return out


def _branch_count(members, owners):
    # interior waypoints contribute two branches, road ends contribute one
    n = 0
    for k in members:
        _, idx, length = owners[k]
        n += 1 if idx in (0, length - 1) else 2
    return n


def intersection_lookup(intersections) -> dict[tuple[str, int], int]:
    """Map (road id, waypoint index) to the index of its intersection."""
    lookup = {}
    for n, it in enumerate(intersections):
        for key in it.incident:
            lookup[key] = n
    return lookup


def road_length(xy: np.ndarray) -> float:
    return float(np.sum(np.hypot(*np.diff(xy, axis=0).T)))

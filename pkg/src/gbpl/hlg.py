"""Heading-length graph (HLG) construction and map entropy.

Every road is split at junctions and then into maximal runs of nearly
constant heading. Each run becomes one graph vertex per direction of travel
carrying a heading distribution (total least squares fit) and a length
distribution N(d, 2 sigma_g^2). Only long vertices (d > t_l) take part in
localization.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError, InvalidInputError, NotFoundError, UndefinedEntropyError
from .geo import TWO_PI, heading_of_vector, wrap_angle
from .map_model import RoadMap, find_intersections, intersection_lookup

DEFAULT_T_L = 100.0
DEFAULT_CURVE_THRESHOLD = math.radians(10.0)
DEFAULT_ANGLE_TOL = math.radians(10.0)
HLG_FORMAT_VERSION = 1


@dataclass(frozen=True)
class RawSegment:
    road_id: str
    kind: str  # "straight" or "curve"
    start: int  # waypoint index, inclusive
    end: int  # waypoint index, inclusive
    points: np.ndarray
    start_node: int | None = None  # intersection index at `start`, if any
    end_node: int | None = None


@dataclass
class HlgVertex:
    id: int
    points: np.ndarray
    theta_mean: float
    theta_var: float
    d_mean: float
    d_var: float
    long: bool
    road_id: str = ""
    forward: bool = True
    twin: int | None = None
    start_node: int | None = None
    end_node: int | None = None


@dataclass(frozen=True)
class HlgEdge:
    src: int
    dst: int
    kind: str  # "intersection" or "curve"
    delta_theta: float


@dataclass(frozen=True)
class StraightPath:
    """A chain of same-heading long vertices with aggregated statistics."""

    vertices: tuple[int, ...]
    theta_mean: float
    theta_var: float
    d_mean: float
    d_var: float
    n_points: int


@dataclass
class Hlg:
    vertices: list[HlgVertex]
    edges: list[HlgEdge]
    t_l: float
    sigma_g: float
    _out: dict = field(default_factory=dict, repr=False)
    _paths: dict = field(default_factory=dict, repr=False)
    _succ: dict = field(default_factory=dict, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._out = {v.id: [] for v in self.vertices}
        for e in self.edges:
            self._out[e.src].append(e)

    @property
    def long_index(self) -> list[int]:
        return [v.id for v in self.vertices if v.long]

    def out_edges(self, vid: int) -> list[HlgEdge]:
        return self._out[vid]

    def vertex(self, vid: int) -> HlgVertex:
        if not 0 <= vid < len(self.vertices):
            raise NotFoundError(f"unknown vertex {vid}")
        return self.vertices[vid]


# ---------------------------------------------------------------- segmentation


def _runs(xy: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """Greedy partition of the polyline's edges into near-constant-heading runs.

    Returns (first point, last point) index pairs; consecutive runs share
    their boundary point.
    """
    d = np.diff(xy, axis=0)
    lengths = np.hypot(d[:, 0], d[:, 1])
    headings = np.arctan2(d[:, 0], d[:, 1])
    runs = []
    start = 0
    s = c = 0.0
    for k in range(len(d)):
        if k > start:
            mean = math.atan2(s, c)
            if abs(wrap_angle(headings[k] - mean)) >= threshold:
                runs.append((start, k))
                start = k
                s = c = 0.0
        s += lengths[k] * math.sin(headings[k])
        c += lengths[k] * math.cos(headings[k])
    runs.append((start, len(d)))
    return runs


def segment_roads(road_map: RoadMap, intersections=None, curve_threshold=DEFAULT_CURVE_THRESHOLD,
                  snap_radius: float = 2.0) -> list[RawSegment]:
    """Split roads at junctions, then into straight runs joined by corner points.

    Straight segments share boundary waypoints with their neighbours; the
    shared waypoint of two consecutive straight runs is reported as a
    single-point ``curve`` segment.
    """
    if not curve_threshold > 0:
        raise InvalidInputError("curve_threshold must be positive")
    if intersections is None:
        intersections = find_intersections(road_map, snap_radius)
    lookup = intersection_lookup(intersections)
    out = []
    for road in road_map.roads:
        xy = road_map.local_points(road)
        n = len(xy)
        cuts = sorted({0, n - 1} | {i for i in range(1, n - 1) if (road.id, i) in lookup})
        for a, b in zip(cuts, cuts[1:]):
            piece = xy[a:b + 1]
            runs = _runs(piece, curve_threshold)
            for j, (r0, r1) in enumerate(runs):
                i0, i1 = a + r0, a + r1
                if j > 0:
                    out.append(RawSegment(road.id, "curve", i0, i0, xy[i0:i0 + 1]))
                out.append(RawSegment(
                    road.id, "straight", i0, i1, xy[i0:i1 + 1],
                    lookup.get((road.id, i0)), lookup.get((road.id, i1)),
                ))
    return out


# ------------------------------------------------------------- orientation fit


def tls_fit(points):
    """Centroid, unit direction (along traversal), centred points and eigen-gap."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        raise DegenerateGeometryError("need at least 2 points")
    c = pts.mean(axis=0)
    r = pts - c
    scatter = r.T @ r
    w, v = np.linalg.eigh(scatter)
    gap = w[1] - w[0]
    if w[1] <= 1e-18 or gap <= 1e-12 * max(w[1], 1.0):
        raise DegenerateGeometryError("points are coincident or have no dominant direction")
    u = v[:, 1]
    if np.dot(pts[-1] - pts[0], u) < 0:
        u = -u
    return c, u, r, gap


def fit_orientation(points, sigma_g: float) -> tuple[float, float]:
    """Total-least-squares heading of `points` and its first-order variance.

    The direction is oriented along the traversal order. With i.i.d. noise
    N(0, sigma_g^2 I) on every point the heading perturbation from point i is
    ((r_i.u) n + (r_i.n) u) . dx_i / (l1 - l2), where r_i are centred points,
    u/n the principal/normal directions and l1 - l2 the scatter eigen-gap.
    """
    c, u, r, gap = tls_fit(points)
    n = np.array([-u[1], u[0]])
    along = r @ u
    across = r @ n
    var = sigma_g ** 2 * float(np.sum(along ** 2 + across ** 2)) / gap ** 2
    return heading_of_vector(u[0], u[1]), var


# ---------------------------------------------------------------- construction


def build_hlg(road_map: RoadMap, t_l: float = DEFAULT_T_L, curve_threshold: float = DEFAULT_CURVE_THRESHOLD,
              snap_radius: float = 2.0, intersections=None) -> Hlg:
    if not t_l > 0:
        raise InvalidInputError("t_l must be positive")
    sigma_g = road_map.sigma_g
    segments = segment_roads(road_map, intersections, curve_threshold, snap_radius)
    oneway = {r.id: r.oneway for r in road_map.roads}

    vertices: list[HlgVertex] = []
    # per road: ordered list of (forward id, reverse id) for straight runs
    chains: dict[str, list[tuple[int, int | None]]] = {}
    prev_road = None
    prev_end = None
    for seg in segments:
        if seg.kind != "straight":
            continue
        pts = seg.points
        d = float(np.hypot(*(pts[-1] - pts[0])))
        if d == 0.0:
            continue
        is_long = d > t_l
        fwd_id = len(vertices)
        vertices.append(_make_vertex(fwd_id, pts, d, is_long, sigma_g, seg, True))
        rev_id = None
        if not oneway.get(seg.road_id, False):
            rev_id = len(vertices)
            vertices.append(_make_vertex(rev_id, pts[::-1].copy(), d, is_long, sigma_g, seg, False))
            vertices[fwd_id].twin = rev_id
            vertices[rev_id].twin = fwd_id
        # consecutive runs of one road share a point; a junction cut resets the chain
        same_piece = seg.road_id == prev_road and prev_end == seg.start and seg.start_node is None
        chain = chains.setdefault(seg.road_id, [])
        if not same_piece:
            chain.append(None)  # piece separator
        chain.append((fwd_id, rev_id))
        prev_road, prev_end = seg.road_id, seg.end

    edges: list[HlgEdge] = []

    def add_edge(a, b, kind):
        va, vb = vertices[a], vertices[b]
        edges.append(HlgEdge(a, b, kind, wrap_angle(vb.theta_mean - va.theta_mean)))

    for chain in chains.values():
        for x, y in zip(chain, chain[1:]):
            if x is None or y is None:
                continue
            add_edge(x[0], y[0], "curve")
            if x[1] is not None and y[1] is not None:
                add_edge(y[1], x[1], "curve")

    incoming: dict[int, list[int]] = {}
    outgoing: dict[int, list[int]] = {}
    for v in vertices:
        if v.end_node is not None:
            incoming.setdefault(v.end_node, []).append(v.id)
        if v.start_node is not None:
            outgoing.setdefault(v.start_node, []).append(v.id)
    for node in sorted(incoming):
        for a in incoming[node]:
            for b in outgoing.get(node, []):
                if b == vertices[a].twin:
                    continue
                add_edge(a, b, "intersection")
    return Hlg(vertices, edges, t_l, sigma_g)


def _make_vertex(vid, pts, d, is_long, sigma_g, seg: RawSegment, forward: bool) -> HlgVertex:
    if is_long:
        theta, theta_var = fit_orientation(pts, sigma_g)
    else:
        # orientation is only estimated for long segments; keep the chord heading for edges
        theta, theta_var = heading_of_vector(*(pts[-1] - pts[0])), 0.0
    start_node, end_node = (seg.start_node, seg.end_node) if forward else (seg.end_node, seg.start_node)
    return HlgVertex(
        id=vid, points=pts, theta_mean=theta, theta_var=theta_var, d_mean=d,
        d_var=2.0 * sigma_g ** 2, long=is_long, road_id=seg.road_id, forward=forward,
        start_node=start_node, end_node=end_node,
    )


# -------------------------------------------------------------- straight paths


def aggregate_chain(g: Hlg, chain) -> StraightPath:
    """Combine same-heading long vertices into one straight-path observation.

    Heading: inverse-variance weighted mean around the first vertex heading.
    Length: sum of vertex lengths plus junction gaps. For a collinear chain the
    interior endpoints cancel, so the length variance stays 2 sigma_g^2.
    """
    vs = [g.vertices[i] for i in chain]
    ref = vs[0].theta_mean
    w = np.array([1.0 / v.theta_var for v in vs])
    offs = np.array([wrap_angle(v.theta_mean - ref) for v in vs])
    theta = wrap_angle(ref + float(np.dot(w, offs) / w.sum()))
    d = sum(v.d_mean for v in vs)
    for a, b in zip(vs, vs[1:]):
        d += float(np.hypot(*(b.points[0] - a.points[-1])))
    return StraightPath(
        vertices=tuple(chain), theta_mean=theta, theta_var=float(1.0 / w.sum()),
        d_mean=d, d_var=2.0 * g.sigma_g ** 2, n_points=sum(len(v.points) for v in vs),
    )


def straight_paths(g: Hlg, start: int, angle_tol: float = DEFAULT_ANGLE_TOL) -> list[StraightPath]:
    """All chains start -> ... through intersection edges keeping start's heading."""
    v0 = g.vertex(start)
    if not v0.long:
        raise InvalidInputError(f"vertex {start} is not a long vertex")
    key = (start, angle_tol)
    cached = g._paths.get(key)
    if cached is not None:
        return cached
    out = []

    def extend(chain):
        out.append(aggregate_chain(g, chain))
        last = chain[-1]
        for e in g.out_edges(last):
            w = g.vertices[e.dst]
            if e.kind != "intersection" or not w.long or e.dst in chain:
                continue
            if abs(wrap_angle(w.theta_mean - v0.theta_mean)) > angle_tol:
                continue
            extend(chain + [e.dst])

    extend([start])
    g._paths[key] = out
    return out


def long_successors(g: Hlg, vid: int, angle_tol: float = DEFAULT_ANGLE_TOL, max_hops: int = 16) -> list[int]:
    """Long vertices reachable from `vid` via short vertices with a heading change."""
    key = (vid, angle_tol)
    cached = g._succ.get(key)
    if cached is not None:
        return cached
    theta = g.vertices[vid].theta_mean
    found = set()
    seen = {vid}
    queue = deque([(vid, 0)])
    while queue:
        cur, hops = queue.popleft()
        if hops >= max_hops:
            continue
        for e in g.out_edges(cur):
            if e.dst in seen:
                continue
            seen.add(e.dst)
            w = g.vertices[e.dst]
            if w.long:
                if abs(wrap_angle(w.theta_mean - theta)) > angle_tol:
                    found.add(e.dst)
            else:
                queue.append((e.dst, hops + 1))
    out = sorted(found)
    g._succ[key] = out
    return out


# ------------------------------------------------------------------- entropy


@dataclass
class EntropyReport:
    joint_entropy: float
    heading_entropy: float
    histogram: np.ndarray  # (n_heading_bins, n_length_bins) counts
    n_ji: int


def entropy_from_counts(counts, n_bins: int) -> float:
    """Shannon entropy of a histogram with logarithm base `n_bins`."""
    counts = np.asarray(counts, dtype=float).ravel()
    total = counts.sum()
    if total <= 0:
        raise UndefinedEntropyError("entropy of an empty histogram")
    if n_bins < 2:
        return 0.0
    rho = counts[counts > 0] / total
    h = -float(np.sum(rho * np.log(rho))) / math.log(n_bins)
    return min(max(h, 0.0), 1.0)


def histogram_2d(thetas, lengths, heading_bin=math.radians(5.0), length_bin=20.0, length_cap=None):
    if not (heading_bin > 0 and length_bin > 0):
        raise InvalidInputError("bin widths must be positive")
    if length_cap is None:
        length_cap = 20 * length_bin
    n_j = int(round(TWO_PI / heading_bin))
    n_i = int(math.ceil(length_cap / length_bin - 1e-9))
    th = np.mod(np.asarray(thetas, dtype=float), TWO_PI)
    j = np.minimum((th / heading_bin).astype(int), n_j - 1)
    i = np.minimum((np.asarray(lengths, dtype=float) / length_bin).astype(int), n_i - 1)
    hist = np.zeros((n_j, n_i), dtype=int)
    np.add.at(hist, (j, i), 1)
    return hist


def joint_entropy(g: Hlg, heading_bin: float = math.radians(5.0), length_bin: float = 20.0,
                  length_cap: float | None = None) -> EntropyReport:
    """Normalized joint heading/length entropy over the long vertices.

    Lengths at or above `length_cap` (default 20 bins) fall into the last bin.
    """
    longs = [v for v in g.vertices if v.long]
    if not longs:
        raise UndefinedEntropyError("graph has no long vertices")
    hist = histogram_2d([v.theta_mean for v in longs], [v.d_mean for v in longs],
                        heading_bin, length_bin, length_cap)
    n_ji = hist.size
    return EntropyReport(
        joint_entropy=entropy_from_counts(hist, n_ji),
        heading_entropy=entropy_from_counts(hist.sum(axis=1), hist.shape[0]),
        histogram=hist,
        n_ji=n_ji,
    )


# ------------------------------------------------------------- serialization


def hlg_to_json(g: Hlg) -> str:
    doc = {
        "version": HLG_FORMAT_VERSION,
        "t_l": float(g.t_l),
        "sigma_g": float(g.sigma_g),
        "vertices": [
            {
                "id": v.id,
                "points": [[float(x), float(y)] for x, y in v.points],
                "theta_mean": float(v.theta_mean),
                "theta_var": float(v.theta_var),
                "d_mean": float(v.d_mean),
                "d_var": float(v.d_var),
                "long": bool(v.long),
                "road_id": v.road_id,
                "forward": v.forward,
                "twin": v.twin,
                "start_node": v.start_node,
                "end_node": v.end_node,
            }
            for v in g.vertices
        ],
        "edges": [
            {"from": e.src, "to": e.dst, "kind": e.kind, "delta_theta": float(e.delta_theta)}
            for e in g.edges
        ],
    }
    return json.dumps(doc, sort_keys=True)


def hlg_from_json(text) -> Hlg:
    doc = json.loads(text)
    if doc.get("version") != HLG_FORMAT_VERSION:
        raise InvalidInputError(f"unsupported HLG version {doc.get('version')!r}")
    vertices = [
        HlgVertex(
            id=int(v["id"]), points=np.asarray(v["points"], dtype=float).reshape(-1, 2),
            theta_mean=float(v["theta_mean"]), theta_var=float(v["theta_var"]),
            d_mean=float(v["d_mean"]), d_var=float(v["d_var"]), long=bool(v["long"]),
            road_id=v.get("road_id", ""), forward=bool(v.get("forward", True)), twin=v.get("twin"),
            start_node=v.get("start_node"), end_node=v.get("end_node"),
        )
        for v in doc["vertices"]
    ]
    edges = [HlgEdge(int(e["from"]), int(e["to"]), e["kind"], float(e["delta_theta"])) for e in doc["edges"]]
    return Hlg(vertices, edges, float(doc["t_l"]), float(doc["sigma_g"]))

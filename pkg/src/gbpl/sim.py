"""Synthetic maps, routes, direct queries and sensor streams with ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dead_reckoning import CompassSample, ImuSample, TrajectoryPoint, WheelSample
from .errors import InvalidInputError, RouteNotFoundError, UnreachableEntropyError
from .geo import GeoPoint, LocalPoint, wrap_angle, wrap_array
from .hlg import Hlg, build_hlg, entropy_from_counts, histogram_2d, joint_entropy, long_successors, straight_paths
from .map_model import RoadMap, road_map_from_local
from .qsg import Query, QuerySegment

SIM_ORIGIN = GeoPoint(41.88, -87.63)


# ------------------------------------------------------------------ maps


@dataclass(frozen=True)
class SimMapSpec:
    target_entropy: float
    n_intersections: int = 1600
    base_grid_pitch: float = 150.0
    rng_seed: int = 0
    t_l: float = 50.0
    sigma_g: float = 5.0
    waypoint_spacing: float = 20.0
    tolerance: float = 0.02

    def __post_init__(self):
        if not 0.0 <= self.target_entropy <= 1.0:
            raise InvalidInputError("target entropy must lie in [0, 1]")
        if self.n_intersections < 4 or self.base_grid_pitch <= 0 or self.t_l <= 0:
            raise InvalidInputError("invalid grid specification")


@dataclass
class SimMap:
    road_map: RoadMap
    spec: SimMapSpec
    nodes: np.ndarray  # (side, side, 2) perturbed intersection positions
    magnitude: float
    entropy: float
    achievable: bool
    rounds: int
    _hlg: Hlg | None = field(default=None, repr=False)

    def hlg(self) -> Hlg:
        if self._hlg is None:
            self._hlg = build_hlg(self.road_map, t_l=self.spec.t_l)
        return self._hlg


def _grid_side(spec: SimMapSpec) -> int:
    return max(2, int(round(math.sqrt(spec.n_intersections))))


def _perturbation(spec: SimMapSpec):
    side = _grid_side(spec)
    rng = np.random.default_rng(spec.rng_seed)
    base = np.stack(np.meshgrid(np.arange(side), np.arange(side), indexing="ij"), -1) * spec.base_grid_pitch
    r = np.sqrt(rng.uniform(0.0, 1.0, (side, side)))[..., None]
    ang = rng.uniform(0.0, 2 * math.pi, (side, side))
    return base.astype(float), r * np.stack([np.cos(ang), np.sin(ang)], -1)


def grid_entropy(nodes: np.ndarray, t_l: float) -> float:
    """Joint entropy of a node grid whose edges are straight two-way segments."""
    a = np.concatenate([nodes[:-1].reshape(-1, 2), nodes[:, :-1].reshape(-1, 2)])
    b = np.concatenate([nodes[1:].reshape(-1, 2), nodes[:, 1:].reshape(-1, 2)])
    d = np.concatenate([b - a, a - b])
    length = np.hypot(d[:, 0], d[:, 1])
    keep = length > t_l
    if not keep.any():
        return 0.0
    theta = np.arctan2(d[keep, 0], d[keep, 1])
    hist = histogram_2d(theta, length[keep])
    return entropy_from_counts(hist, hist.size)


def grid_road_map(nodes: np.ndarray, spacing: float = 20.0, sigma_g: float = 5.0,
                  origin: GeoPoint = SIM_ORIGIN) -> RoadMap:
    """Row and column roads through the node grid, densified to `spacing`."""
    side = nodes.shape[0]

    def densify(chain):
        out = [chain[0]]
        for p, q in zip(chain[:-1], chain[1:]):
            n = max(1, int(math.ceil(np.hypot(*(q - p)) / spacing)))
            for k in range(1, n + 1):
                out.append(p + (q - p) * (k / n))
        return np.array(out)

    roads = {}
    for i in range(side):
        roads[f"col{i:03d}"] = densify(nodes[i, :, :])
        roads[f"row{i:03d}"] = densify(nodes[:, i, :])
    return road_map_from_local(roads, origin, sigma_g)


def gen_map(spec: SimMapSpec, max_rounds: int = 200) -> SimMap:
    """Perturb a rectilinear grid until its joint entropy is within tolerance of the target.

    Node displacement directions are fixed per seed; only their common scale
    is searched, by bisection on the rising branch of entropy vs scale.
    """
    base, dirs = _perturbation(spec)

    def h(mag):
        return grid_entropy(base + mag * dirs, spec.t_l)

    floor = h(0.0)
    rounds = 0
    if spec.target_entropy <= floor + spec.tolerance:
        mag, ok = 0.0, abs(spec.target_entropy - floor) <= spec.tolerance
    else:
        # locate the entropy peak on a coarse scale
        scales = spec.base_grid_pitch * np.linspace(0.02, 3.0, 150)
        values = [h(m) for m in scales]
        rounds += len(scales)
        peak = int(np.argmax(values))
        if values[peak] < spec.target_entropy - spec.tolerance:
            raise UnreachableEntropyError(
                f"target entropy {spec.target_entropy:.3f} exceeds the grid maximum {values[peak]:.3f}")
        lo, hi = 0.0, float(scales[peak])
        mag = hi
        while rounds < max_rounds:
            mag = 0.5 * (lo + hi)
            val = h(mag)
            rounds += 1
            if abs(val - spec.target_entropy) <= spec.tolerance / 4:
                break
            if val < spec.target_entropy:
                lo = mag
            else:
                hi = mag
        ok = True
    nodes = np.round(base + mag * dirs, 6)
    road_map = grid_road_map(nodes, spec.waypoint_spacing, spec.sigma_g)
    sim = SimMap(road_map, spec, nodes, float(mag), 0.0, ok, rounds)
    sim.entropy = joint_entropy(sim.hlg()).joint_entropy
    if ok and abs(sim.entropy - spec.target_entropy) > spec.tolerance:
        if rounds >= max_rounds:
            raise UnreachableEntropyError(f"entropy {sim.entropy:.3f} missed target after {rounds} rounds")
        sim.achievable = False
    return sim


# ------------------------------------------------------------------ routes


@dataclass(frozen=True)
class Route:
    chains: tuple[tuple[int, ...], ...]  # straight paths driven, in order
    vertices: tuple[int, ...]  # every vertex traversed, including short connectors


def _connector(g: Hlg, src: int, dst: int, max_hops: int = 16) -> tuple[int, ...]:
    """Short vertices on a shortest hop path from src to dst (exclusive)."""
    prev = {src: None}
    frontier = [src]
    for _ in range(max_hops + 1):
        nxt = []
        for u in frontier:
            for e in g.out_edges(u):
                w = e.dst
                if w in prev:
                    continue
                if w == dst:
                    path = []
                    while u != src:
                        path.append(u)
                        u = prev[u]
                    return tuple(reversed(path))
                if not g.vertices[w].long:
                    prev[w] = u
                    nxt.append(w)
        frontier = nxt
    raise RouteNotFoundError(f"no connection from {src} to {dst}")


def random_route(g: Hlg, n: int, rng, angle_tol: float = math.radians(10.0), attempts: int = 200,
                 maximal: bool = False) -> Route:
    """Random drivable sequence of n straight paths joined by heading changes."""
    longs = g.long_index
    if n < 1 or not longs:
        raise RouteNotFoundError("graph has no long vertices" if not longs else "n must be positive")
    for _ in range(attempts):
        start = longs[int(rng.integers(len(longs)))]
        chains = []
        verts = []
        cur = start
        ok = True
        for i in range(n):
            paths = straight_paths(g, cur, angle_tol)
            if maximal:
                longest = max(len(p.vertices) for p in paths)
                paths = [p for p in paths if len(p.vertices) == longest]
            chain = paths[int(rng.integers(len(paths)))].vertices
            chains.append(chain)
            verts.extend(chain)
            if i == n - 1:
                break
            succ = long_successors(g, chain[-1], angle_tol)
            if not succ:
                ok = False
                break
            cur = succ[int(rng.integers(len(succ)))]
            verts.extend(_connector(g, chain[-1], cur))
        if ok:
            return Route(tuple(chains), tuple(verts))
    raise RouteNotFoundError(f"no route with {n} straight segments found")


@dataclass(frozen=True)
class QueryNoise:
    sigma_theta: float = math.radians(5.0)
    sigma_g: float = 5.0
    n_obs: int = 50

    @property
    def sigma_d(self) -> float:
        return math.sqrt(2.0) * self.sigma_g


def gen_query_direct(g: Hlg, n: int, noise: QueryNoise = QueryNoise(), rng=None,
                     route: Route | None = None) -> tuple[Query, Route]:
    """Query of a random route with Gaussian noise added to the map truth.

    Each segment's heading and length are the straight-path values of the
    driven chain plus N(0, sigma_theta^2) and N(0, sigma_d^2).
    """
    rng = np.random.default_rng() if rng is None else rng
    if route is None:
        route = random_route(g, n, rng)
    segs = []
    for k, chain in enumerate(route.chains, start=1):
        truth = _chain_truth(g, chain)
        theta = wrap_angle(truth[0] + rng.normal(0.0, noise.sigma_theta)) if noise.sigma_theta > 0 else truth[0]
        d = truth[1] + rng.normal(0.0, noise.sigma_d) if noise.sigma_d > 0 else truth[1]
        segs.append(QuerySegment(
            k=k, theta_mean=theta, theta_var=max(noise.sigma_theta ** 2, 1e-10), n_obs=noise.n_obs,
            d_mean=d, d_var=max(noise.sigma_d ** 2, 1e-10), t_start=float(k - 1), t_end=float(k) - 0.5,
        ))
    return Query(segs), route


def _chain_truth(g: Hlg, chain) -> tuple[float, float]:
    for p in straight_paths(g, chain[0]):
        if p.vertices == tuple(chain):
            return p.theta_mean, p.d_mean
    raise RouteNotFoundError(f"chain {chain} is not a straight path")


# ------------------------------------------------------------------ sweep


@dataclass
class SweepRun:
    entropy: float
    sample: int
    mode: str
    solutions: list[int]  # per n = 1..n_max
    fix_n: int | None
    fix_correct: bool | None


def solution_counts(g: Hlg, query: Query, route: Route, cfg) -> tuple[list[int], int | None, bool | None]:
    """Number of solutions after each query prefix; a fix counts as one from then on."""
    from .global_loc import GlobalLocalizer

    gl = GlobalLocalizer(g, cfg)
    counts = []
    fix_n = None
    correct = None
    for n, q in enumerate(query, start=1):
        if fix_n is not None:
            counts.append(1)
            continue
        res = gl.step(q)
        counts.append(res.n_solutions)
        if res.status == "fix":
            fix_n = n
            path = res.fix.candidate.path
            correct = tuple(path) == tuple(route.chains[n - len(path):n])
    return counts, fix_n, correct


def _sweep_map(mi: int, target: float, samples: int, n_max: int, seed: int, modes, alpha: float,
               noise: QueryNoise, map_kwargs, max_candidates):
    """All (n, mode) cells of one map; returns (rows, runs, sim) or (None, None, error)."""
    from .global_loc import MatchConfig

    spec = SimMapSpec(float(target), rng_seed=seed * 1000 + mi, **map_kwargs)
    try:
        sim = gen_map(spec)
    except UnreachableEntropyError as exc:
        return None, None, exc
    if not sim.achievable:
        return None, None, UnreachableEntropyError(f"target {target:.3f}: measured {sim.entropy:.3f}")
    g = sim.hlg()
    rng = np.random.default_rng([seed, mi])
    queries = [gen_query_direct(g, n_max, noise, rng) for _ in range(samples)]
    rows, runs = [], []
    for mode in modes:
        cfg = MatchConfig(alpha=alpha, mode=mode, max_candidates=max_candidates)
        per_n = []
        for si, (query, route) in enumerate(queries):
            counts, fix_n, correct = solution_counts(g, query, route, cfg)
            runs.append(SweepRun(sim.entropy, si, mode, counts, fix_n, correct))
            per_n.append(counts)
        arr = np.array(per_n, dtype=float)
        for n in range(n_max):
            rows.append({
                "entropy": sim.entropy, "n": n + 1, "mode": mode,
                "mean_solutions": float(arr[:, n].mean()), "std": float(arr[:, n].std()),
            })
    return rows, runs, sim


def run_sweep(targets, samples: int = 20, n_max: int = 20, seed: int = 0, modes=None,
              alpha: float = 0.05, noise: QueryNoise = QueryNoise(), map_kwargs=None, on_skip=None,
              max_candidates: int | None = 5000, jobs: int = 1):
    """Mean solution counts per (map entropy, n, mode) on synthetic maps.

    Maps are independent and may run in `jobs` worker processes; results are
    merged in target order, so the output does not depend on `jobs`.
    Returns (rows, runs, maps) where rows are dicts with keys
    entropy, n, mode, mean_solutions, std.
    """
    from .global_loc import HEADING_LENGTH, HEADING_ONLY

    modes = tuple(modes or (HEADING_LENGTH, HEADING_ONLY))
    args = [(mi, float(t), samples, n_max, seed, modes, alpha, noise, dict(map_kwargs or {}), max_candidates)
            for mi, t in enumerate(targets)]
    if jobs > 1 and len(args) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_sweep_map, *zip(*args)))
    else:
        results = [_sweep_map(*a) for a in args]
    rows, runs, maps = [], [], []
    for a, (r, ru, sim) in zip(args, results):
        if r is None:
            if on_skip:
                on_skip(a[1], sim)
            continue
        rows.extend(r)
        runs.extend(ru)
        maps.append(sim)
    return rows, runs, maps


# ------------------------------------------------------------------ sensors


@dataclass(frozen=True)
class SensorNoise:
    accel: float = 0.05  # m/s^2 per sample
    gyro: float = 0.002  # rad/s per sample
    compass: float = math.radians(1.0)
    wheel: float = 0.05  # m/s
    compass_spike_at: float | None = None  # time of a single 90 degree spike
    compass_spike: float = math.radians(90.0)

    @staticmethod
    def zero() -> "SensorNoise":
        return SensorNoise(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class DriveProfile:
    v_max: float = 15.0
    accel: float = 1.5
    turn_radius: float = 8.0
    turn_speed: float = 5.0
    tau: float = 0.01
    c_compass: int = 4
    c_wheel: int = 5
    standstill: float = 3.0


@dataclass
class SimRun:
    route: Route | None
    ground_truth: list[TrajectoryPoint]
    imu: list[ImuSample]
    compass: list[CompassSample]
    wheel: list[WheelSample]
    injected_ssf: float
    noise: SensorNoise
    start: LocalPoint  # map position of the dead-reckoning origin
    corners: np.ndarray
    truth_xy: np.ndarray  # (K, 2) map-frame positions at IMU ticks
    truth_gamma: np.ndarray
    clean_imu: list[ImuSample] = field(default_factory=list, repr=False)


def route_polyline(g: Hlg, route: Route) -> np.ndarray:
    """Corner points of the driven route (collinear interior points removed)."""
    pts = [g.vertices[route.vertices[0]].points[0]]
    for v in route.vertices:
        for p in g.vertices[v].points:
            if np.hypot(*(p - pts[-1])) > 1e-6:
                pts.append(p)
    pts = np.array(pts)
    keep = [0]
    for i in range(1, len(pts) - 1):
        a = pts[i] - pts[keep[-1]]
        b = pts[i + 1] - pts[i]
        if abs(a[0] * b[1] - a[1] * b[0]) > 1e-6 * np.hypot(*a) * np.hypot(*b):
            keep.append(i)
    keep.append(len(pts) - 1)
    return pts[keep]


def _fillet_path(corners: np.ndarray, radius: float):
    """Straight pieces and circular arcs: list of (kind, data, length)."""
    pieces = []
    cur = corners[0].astype(float)
    for i in range(1, len(corners) - 1):
        a, c, b = corners[i - 1], corners[i], corners[i + 1]
        u1 = (c - a) / np.hypot(*(c - a))
        u2 = (b - c) / np.hypot(*(b - c))
        turn = math.atan2(u1[0] * u2[1] - u1[1] * u2[0], float(u1 @ u2))
        if abs(turn) < 1e-9:
            continue
        r = radius
        tangent = r * math.tan(abs(turn) / 2)
        room = 0.4 * min(np.hypot(*(c - a)), np.hypot(*(b - c)))
        if tangent > room:
            r *= room / tangent
            tangent = room
        p_in = c - u1 * tangent
        p_out = c + u2 * tangent
        pieces.append(("line", (cur, p_in), float(np.hypot(*(p_in - cur)))))
        pieces.append(("arc", (p_in, u1, turn, r), abs(turn) * r))
        cur = p_out
    pieces.append(("line", (cur, corners[-1].astype(float)), float(np.hypot(*(corners[-1] - cur)))))
    return pieces


def _sample_path(pieces, s: np.ndarray):
    """Positions, compass headings and curvature flags at arc lengths s."""
    starts = np.concatenate([[0.0], np.cumsum([p[2] for p in pieces])])
    xy = np.zeros((len(s), 2))
    heading = np.zeros(len(s))
    idx = np.clip(np.searchsorted(starts, s, side="right") - 1, 0, len(pieces) - 1)
    for k, (kind, data, length) in enumerate(pieces):
        m = idx == k
        if not m.any():
            continue
        ds = np.clip(s[m] - starts[k], 0.0, length)
        if kind == "line":
            a, b = data
            u = (b - a) / max(length, 1e-12)
            xy[m] = a + ds[:, None] * u
            heading[m] = math.atan2(u[0], u[1]) if length > 0 else 0.0
        else:
            p_in, u1, turn, r = data
            sign = 1.0 if turn > 0 else -1.0
            n = sign * np.array([-u1[1], u1[0]])  # towards the arc centre
            centre = p_in + r * n
            phi = ds / r * sign
            rel = p_in - centre
            cos, sin = np.cos(phi), np.sin(phi)
            xy[m] = centre + np.column_stack([cos * rel[0] - sin * rel[1], sin * rel[0] + cos * rel[1]])
            h0 = math.atan2(u1[0], u1[1])
            heading[m] = wrap_array(h0 - phi)
    return xy, heading, starts


def _speed_profile(pieces, prof: DriveProfile):
    total = sum(p[2] for p in pieces)
    starts = np.concatenate([[0.0], np.cumsum([p[2] for p in pieces])])
    arcs = [(starts[k], starts[k + 1]) for k, p in enumerate(pieces) if p[0] == "arc"]

    def vmax(s):
        v = min(prof.v_max, math.sqrt(2 * prof.accel * max(total - s, 0.0)))
        for a, b in arcs:
            gap = a - s if s < a else (s - b if s > b else 0.0)
            v = min(v, math.sqrt(prof.turn_speed ** 2 + 2 * prof.accel * gap))
        return v

    return total, vmax


def gen_sensors(g: Hlg, route: Route, profile: DriveProfile = DriveProfile(),
                noise: SensorNoise = SensorNoise(), injected_ssf: float = 1.0, seed: int = 0,
                corners: np.ndarray | None = None) -> SimRun:
    """IMU, compass and wheel streams for driving the route with filleted turns.

    The ground truth is the exact discrete integration of the noise-free IMU
    readings (the filter's own motion model), so a noise-free filter run
    reproduces it to rounding error.
    """
    if not injected_ssf > 0:
        raise InvalidInputError("injected_ssf must be positive")
    rng = np.random.default_rng(seed)
    corners = route_polyline(g, route) if corners is None else np.asarray(corners, dtype=float)
    pieces = _fillet_path(corners, profile.turn_radius)
    total, vmax = _speed_profile(pieces, profile)
    tau = profile.tau

    # arc length and speed per tick; the vehicle starts and ends at rest
    n_still = int(round(profile.standstill / tau))
    s_list, v_list = [0.0] * n_still, [0.0] * n_still
    s, v = 0.0, 0.0
    while s < total - 1e-6:
        v = min(vmax(s), v + profile.accel * tau)
        if v < 0.3 and s > 0.5 * total:
            # creep to the end instead of approaching it asymptotically
            v = 0.3
        v = min(v, (total - s) / tau)
        s_list.append(s)
        v_list.append(v)
        s += tau * v
    s_list += [total] * n_still
    v_list += [0.0] * n_still
    s_arr = np.array(s_list)
    speed = np.array(v_list)
    _, gamma, _ = _sample_path(pieces, s_arr)
    # hold the initial heading during the standstill
    gamma[:n_still] = gamma[n_still] if len(gamma) > n_still else gamma[0]
    gamma = wrap_array(gamma)

    n = len(s_arr)
    t = np.arange(n) * tau
    vel = np.column_stack([speed * np.sin(gamma), speed * np.cos(gamma), np.zeros(n)])
    pos = np.zeros((n, 3))
    pos[1:] = np.cumsum(tau * vel[:-1], axis=0)

    # readings stamped t[k+1] drive the step k -> k+1
    acc_i = (vel[1:] - vel[:-1]) / tau + np.array([0.0, 0.0, 9.8])
    psi = math.pi / 2 - gamma[:-1]
    c, sn = np.cos(psi), np.sin(psi)
    acc_b = np.column_stack([c * acc_i[:, 0] + sn * acc_i[:, 1], -sn * acc_i[:, 0] + c * acc_i[:, 1], acc_i[:, 2]])
    wz = -wrap_array(gamma[1:] - gamma[:-1]) / tau

    start = corners[0]
    truth_xy = pos[:, :2] + start
    clean_imu = [ImuSample(float(t[0]), (0.0, 0.0, 9.8), (0.0, 0.0, 0.0))]
    clean_imu += [ImuSample(float(t[k + 1]), tuple(map(float, acc_b[k])), (0.0, 0.0, float(wz[k])))
                  for k in range(n - 1)]
    _self_check(clean_imu, gamma[0], pos, tau)

    acc_n = acc_b + rng.normal(0.0, noise.accel, acc_b.shape) if noise.accel > 0 else acc_b
    gyr_n = rng.normal(0.0, noise.gyro, (n - 1, 3)) if noise.gyro > 0 else np.zeros((n - 1, 3))
    gyr_n[:, 2] += wz
    imu = [clean_imu[0]] + [ImuSample(float(t[k + 1]), tuple(map(float, acc_n[k])), tuple(map(float, gyr_n[k])))
                            for k in range(n - 1)]

    comp_idx = np.arange(0, n, profile.c_compass)
    phi = gamma[comp_idx] + (rng.normal(0.0, noise.compass, len(comp_idx)) if noise.compass > 0 else 0.0)
    if noise.compass_spike_at is not None:
        j = int(np.argmin(np.abs(t[comp_idx] - noise.compass_spike_at)))
        phi[j] += noise.compass_spike
    compass = [CompassSample(float(t[i]), wrap_angle(float(p))) for i, p in zip(comp_idx, phi)]

    wheel_idx = np.arange(0, n, profile.c_wheel)
    w = speed[wheel_idx] / injected_ssf
    if noise.wheel > 0:
        w = w + rng.normal(0.0, noise.wheel, len(w)) * (speed[wheel_idx] > 0)
    wheel = [WheelSample(float(t[i]), float(max(x, 0.0))) for i, x in zip(wheel_idx, w)]

    truth = [
        TrajectoryPoint(float(t[k]), LocalPoint(float(truth_xy[k, 0]), float(truth_xy[k, 1])), float(gamma[k]),
                        np.zeros((2, 2)), 0.0, injected_ssf, float(speed[k]))
        for k in range(0, n, max(1, profile.c_compass))
    ]
    return SimRun(route, truth, imu, compass, wheel, injected_ssf, noise, LocalPoint(float(start[0]), float(start[1])),
                  corners, truth_xy, gamma, clean_imu)


def _self_check(imu, gamma0: float, pos: np.ndarray, tau: float, tol_per_100m: float = 1e-3):
    """Integrate noise-free readings with the filter's level-motion equations."""
    acc = np.array([s.accel for s in imu[1:]])
    wz = np.array([s.gyro[2] for s in imu[1:]])
    gamma = np.concatenate([[gamma0], gamma0 - tau * np.cumsum(wz)])
    psi = math.pi / 2 - gamma[:-1]
    c, s = np.cos(psi), np.sin(psi)
    acc_i = np.column_stack([c * acc[:, 0] - s * acc[:, 1], s * acc[:, 0] + c * acc[:, 1], acc[:, 2] - 9.8])
    vel = np.vstack([np.zeros(3), np.cumsum(tau * acc_i, axis=0)])
    p = np.vstack([np.zeros(3), np.cumsum(tau * vel[:-1], axis=0)])
    travelled = float(np.sum(np.linalg.norm(np.diff(pos, axis=0), axis=1)))
    err = float(np.max(np.linalg.norm(p - pos, axis=1)))
    if err > tol_per_100m * max(travelled, 100.0) / 100.0:
        raise AssertionError(f"sensor streams inconsistent with ground truth ({err:.2e} m)")


def rectangle_corners(width: float = 400.0, height: float = 300.0, laps: int = 1) -> np.ndarray:
    base = [(0.0, 0.0), (0.0, height), (width, height), (width, 0.0)]
    pts = base * laps + [base[0]]
    return np.array(pts)

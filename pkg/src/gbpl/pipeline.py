"""QSG -> GL -> LAV state machine over raw sensor streams.

The EKF runs on every IMU tick and the query segmenter watches its heading.
A closed straight segment is finished once the next plateau has run for
`adj_len` metres, which gives the virtual corner at its end. Finished
segments feed global localization until a unique fix, and after that each
one is aligned to its map segment. Accepted alignments reset the EKF pose and
refine the wheel scale factor; a rejected alignment restarts localization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dead_reckoning import (
    IDX_S, DeadReckoner, NoiseConfig, TrajectoryPoint, reset_from_alignment, schedule, to_trajectory_point,
    update_ssf,
)
from .errors import DegenerateGeometryError, InvalidInputError, NoIntersectionError
from .geo import LocalPoint, circular_mean, wrap_angle
from .global_loc import (
    GlobalLocalizer, MatchConfig, chain_end, chain_points, chain_start, pair_statistics_arrays, t_critical,
)
from .hlg import Hlg, long_successors, straight_paths
from .lav import CALIBRATED, SsfAccumulator, Transform2, fit_line, lav_cycle, virtual_point
from .qsg import QsgConfig, QuerySegment, QuerySegmenter, segment_stats

PENDING, LOCALIZED, FAILED = "pending", "localized", "failed"


@dataclass(frozen=True)
class PipelineConfig:
    match: MatchConfig = MatchConfig()
    qsg: QsgConfig | None = None  # default: QSG defaults with min_len = t_l / 2 of the graph
    noise: NoiseConfig = NoiseConfig()
    sigma_g: float = 5.0
    alpha_lav: float = 0.05
    verification: str = CALIBRATED
    restart_budget: int = 3
    adj_len: float = 20.0  # metres of the next plateau needed for a virtual end point
    init_window: int = 50
    s0: float = 1.0
    start_at_corner: bool = True  # the drive starts at rest at the first segment's corner
    keep_raw: bool = False  # also run an EKF without resets (for plots)


@dataclass
class SegmentRecord:
    k: int
    seg: QuerySegment
    points: list
    p_s: np.ndarray | None = None
    p_e: np.ndarray | None = None
    d_query: float = 0.0
    d_var: float = 0.0
    s_mean: float = 1.0
    chain: tuple | None = None


@dataclass(frozen=True)
class FixRecord:
    k: int
    t: float
    x: float
    y: float
    heading: float
    n_solutions: int
    vertex: int


@dataclass(frozen=True)
class AlignmentRecord:
    k: int
    t: float
    accepted: bool
    cost: float
    dof: int
    angle: float
    tx: float
    ty: float
    s_ssf: float
    ssf_var: float
    x: float = math.nan  # reset position (map frame)
    y: float = math.nan


@dataclass
class PipelineResult:
    status: str
    trajectory: list  # (t, x, y, gamma, s, localized)
    fixes: list[FixRecord]
    alignments: list[AlignmentRecord]
    segments: list[SegmentRecord]
    restarts: int
    raw: list = field(default_factory=list)  # (t, x, y) of the un-reset EKF

    @property
    def localized(self) -> bool:
        return self.status == LOCALIZED


def _path_length(points) -> float:
    if len(points) < 2:
        return 0.0
    xy = np.array([[p.pos.x, p.pos.y] for p in points])
    return float(np.sum(np.hypot(*np.diff(xy, axis=0).T)))


def _xy(points) -> np.ndarray:
    return np.array([[p.pos.x, p.pos.y] for p in points])


def _try_virtual(points, adj):
    if adj is None or len(adj) < 2:
        return None
    try:
        return virtual_point(fit_line(_xy(points)), fit_line(_xy(adj))).as_array()
    except (NoIntersectionError, DegenerateGeometryError):
        return None


class Pipeline:
    """Streaming localization over one drive; call `run` with the three sensor streams."""

    def __init__(self, g: Hlg, cfg: PipelineConfig = PipelineConfig()):
        self.g = g
        self.cfg = cfg
        self.gl = GlobalLocalizer(g, cfg.match)
        qsg = cfg.qsg if cfg.qsg is not None else QsgConfig(min_len=0.5 * g.t_l)
        self.seg = QuerySegmenter(qsg)
        self.dr = DeadReckoner(cfg.noise, cfg.init_window)
        self.raw_dr = DeadReckoner(cfg.noise, cfg.init_window) if cfg.keep_raw else None
        self.ssf = SsfAccumulator(cfg.sigma_g)
        self.status = PENDING
        self.restarts = 0
        self.records: list[SegmentRecord] = []
        self.pending: SegmentRecord | None = None
        self.fixes: list[FixRecord] = []
        self.alignments: list[AlignmentRecord] = []
        self.rows: list = []
        self.raw_rows: list = []
        self.start_point: TrajectoryPoint | None = None
        self.chain: tuple | None = None  # map chain of the last finished segment
        self.last_path: tuple | None = None

    # -------------------------------------------------------------- streaming

    def run(self, imu, compass, wheel) -> PipelineResult:
        if not imu:
            raise InvalidInputError("empty IMU stream")
        t0 = imu[0].t
        compass = [c for c in compass if c.t > t0]
        wheel = [w for w in wheel if w.t > t0]
        self.dr.start(compass, t0, self.cfg.s0)
        if self.raw_dr is not None:
            self.raw_dr.start(compass, t0, self.cfg.s0)
        first = to_trajectory_point(self.dr.state)
        self.start_point = first
        self._emit(first)
        for sample, c, w in schedule(imu[1:], compass, wheel):
            tp = self.dr.tick(sample, c, w)
            if self.raw_dr is not None:
                r = self.raw_dr.tick(sample, c, w)
                self.raw_rows.append((r.t, r.pos.x, r.pos.y))
            self._emit(tp)
            self._on_point(tp)
            if self.status == FAILED:
                break
        if self.status != FAILED:
            for s in self.seg.flush():
                self._on_closed(s)
            if self.pending is not None:
                self._finish(self.pending, None)
                self.pending = None
        return PipelineResult(self.status, self.rows, self.fixes, self.alignments, self.records, self.restarts,
                              self.raw_rows)

    def _emit(self, tp: TrajectoryPoint):
        self.rows.append((tp.t, tp.pos.x, tp.pos.y, tp.heading, tp.s, int(self.status == LOCALIZED)))

    def _on_point(self, tp: TrajectoryPoint):
        for s in self.seg.push(tp):
            self._on_closed(s)
        if self.pending is not None:
            nxt = self.seg.open_points()
            if _path_length(nxt) >= self.cfg.adj_len and self._turned(self.pending, nxt):
                rec, self.pending = self.pending, None
                self._finish(rec, nxt)

    def _turned(self, rec: SegmentRecord, points) -> bool:
        """Whether `points` head away from the segment by more than the graph's straightness tolerance."""
        theta = circular_mean(np.array([p.heading for p in points[-50:]]))
        return abs(wrap_angle(theta - rec.seg.theta_mean)) > self.cfg.match.angle_tol

    def _on_closed(self, s: QuerySegment):
        if self.pending is not None:
            if not self._turned(self.pending, s.points):
                # same straight path in the graph's sense: merge the plateaus
                pts = self.pending.points + list(s.points)
                self.pending.points = pts
                self.pending.seg = segment_stats(pts, self.pending.k, self.seg.cfg.d_floor)
                return
            rec, self.pending = self.pending, None
            self._finish(rec, list(s.points))
        k = len(self.records) + 1
        self.pending = SegmentRecord(k, s, list(s.points))

    # --------------------------------------------------------- segment finish

    def _finish(self, rec: SegmentRecord, nxt):
        prev = self.records[-1].points if self.records else None
        rec.p_s = _try_virtual(rec.points, prev)
        if rec.p_s is None and not self.records and self.cfg.start_at_corner:
            rec.p_s = np.array([self.start_point.pos.x, self.start_point.pos.y])
        rec.p_e = _try_virtual(rec.points, nxt)
        if rec.p_e is None and nxt is None:
            rec.p_e = _xy(rec.points[-1:])[0]
        a = rec.p_s if rec.p_s is not None else _xy(rec.points[:1])[0]
        b = rec.p_e if rec.p_e is not None else _xy(rec.points[-1:])[0]
        rec.d_query = float(np.hypot(*(b - a)))
        rec.s_mean = float(np.mean([p.s for p in rec.points]))
        P_ss = float(self.dr.state.P[IDX_S, IDX_S])
        rec.d_var = rec.seg.d_var + rec.d_query ** 2 * P_ss / rec.s_mean ** 2
        self.records.append(rec)
        q = rec.seg.with_length(rec.d_query, rec.d_var)
        if self.status == LOCALIZED:
            self._track(rec, q, nxt)
        elif self.status == PENDING:
            self._localize(rec, q, nxt)

    def _localize(self, rec: SegmentRecord, q, nxt):
        before = self.gl.restarts
        res = self.gl.step(q)
        self.restarts += self.gl.restarts - before
        if self._over_budget():
            return
        if res.status != "fix":
            return
        cand = res.fix.candidate
        rec.chain = cand.path[-1]
        self.last_path = cand.path
        start, _ = chain_start(self.g, cand.path)
        anchor = rec.p_s if rec.p_s is not None else _xy(rec.points[:1])[0]
        init = Transform2(0.0, start - anchor)
        pos, heading = res.fix.position, res.fix.heading
        self.fixes.append(FixRecord(rec.k, rec.points[-1].t, pos.x, pos.y, heading, res.n_solutions,
                                    cand.last_vertex))
        self.ssf.clear()
        self._align(rec, init, nxt, count_ssf=False, prev_chain=cand.path[-2] if len(cand.path) > 1 else None)

    def _track(self, rec: SegmentRecord, q, nxt):
        """Pick the successor straight path that best explains the segment, then align."""
        last = self.chain[-1]
        best, best_score = None, math.inf
        succ = long_successors(self.g, last, self.cfg.match.angle_tol)
        p_s = rec.p_s if rec.p_s is not None else _xy(rec.points[:1])[0]
        for v in succ:
            paths = straight_paths(self.g, v, self.cfg.match.angle_tol)
            t, nu, z = pair_statistics_arrays(q, [p.theta_mean for p in paths], [p.theta_var for p in paths],
                                              [p.d_mean for p in paths], [p.d_var for p in paths],
                                              [p.n_points for p in paths])
            ok = np.abs(t) <= t_critical(self.cfg.match.alpha, nu)
            for p, ti, zi, good in zip(paths, t, z, ok):
                if not good:
                    continue
                start, _ = chain_start(self.g, (self.chain, p.vertices))
                gap = float(np.hypot(*(start - p_s)))
                score = ti ** 2 + zi ** 2 + (gap / self.cfg.sigma_g) ** 2
                if score < best_score:
                    best, best_score = p.vertices, score
        if best is None:
            self._lose(rec)
            return
        rec.chain = best
        self._align(rec, Transform2(), nxt, count_ssf=True, prev_chain=self.chain)

    def _next_chain(self, chain, nxt):
        """Successor straight path whose heading best matches the points after the turn."""
        if not nxt or len(nxt) < 2:
            return None
        theta = circular_mean(np.array([p.heading for p in nxt[-50:]]))
        best, best_err = None, self.cfg.match.angle_tol * 3
        for v in long_successors(self.g, chain[-1], self.cfg.match.angle_tol):
            for p in straight_paths(self.g, v, self.cfg.match.angle_tol):
                err = abs(wrap_angle(p.theta_mean - theta))
                if err < best_err:
                    best, best_err = p.vertices, err
        return best

    def _align(self, rec: SegmentRecord, init: Transform2, nxt, count_ssf: bool, prev_chain=None):
        waypoints = chain_points(self.g, rec.chain)
        # map corners built like the query's virtual points
        map_start = chain_start(self.g, (prev_chain, rec.chain) if prev_chain else (rec.chain,))[0]
        map_end = chain_end(self.g, rec.chain, self._next_chain(rec.chain, nxt))
        pieces = [self.g.vertices[v].points for v in rec.chain]
        prev = self.records[-2].points if len(self.records) > 1 else None
        cur = to_trajectory_point(self.dr.state)
        out = lav_cycle(rec.points, waypoints, self.cfg.sigma_g, init, prev=prev, nxt=nxt, accumulator=None,
                        alpha=self.cfg.alpha_lav, mode=self.cfg.verification, s_mean=rec.s_mean,
                        query_var=rec.seg.d_var, current=cur, map_pieces=pieces, map_start=map_start,
                        map_end=map_end)
        res = out.result
        est = self.ssf.estimate()
        if out.accepted:
            if count_ssf and out.d_query is not None:
                est = self.ssf.add(out.d_map, out.d_query, rec.seg.d_var / rec.s_mean ** 2)
            self._reset(res.transform, out.pose, out.pose_cov, res)
            if count_ssf and est is not None:
                self.dr.state = update_ssf(self.dr.state, est)
            self.chain = rec.chain
            self.status = LOCALIZED
        rec_s = (est.s_ssf, est.variance) if est is not None else (math.nan, math.nan)
        T = res.transform if res is not None else Transform2()
        self.alignments.append(AlignmentRecord(
            rec.k, cur.t, out.accepted, res.cost if res else math.nan, res.dof if res else 0, T.angle,
            float(T.t[0]), float(T.t[1]), rec_s[0], rec_s[1],
            out.pose[0].x if out.pose else math.nan, out.pose[0].y if out.pose else math.nan))
        if not out.accepted:
            self._lose(rec)

    def _reset(self, T: Transform2, pose, pose_cov, res):
        st = self.dr.state
        c, s = math.cos(T.angle), math.sin(T.angle)
        x = st.x.copy()
        x[3], x[4] = c * x[3] - s * x[4], s * x[3] + c * x[4]
        st = replace(st, x=x)
        self.dr.state = reset_from_alignment(st, pose, pose_cov)

        def fn(p: TrajectoryPoint) -> TrajectoryPoint:
            xy = T.apply(np.array([p.pos.x, p.pos.y]))
            cov = res.pose_cov_at(np.array([p.pos.x, p.pos.y]))[:2, :2]
            return replace(p, pos=LocalPoint(float(xy[0]), float(xy[1])), heading=wrap_angle(p.heading - T.angle),
                           pos_cov=cov)

        self.seg.remap(fn, T.angle)
        for r in self.records[-2:]:
            r.points = [fn(p) for p in r.points]
        if self.pending is not None:
            self.pending.points = [fn(p) for p in self.pending.points]

    def _lose(self, rec: SegmentRecord):
        """Back to global localization, starting from this segment."""
        self.status = PENDING
        self.chain = None
        self.ssf.clear()
        self.restarts += 1
        self.gl.reset()
        self._over_budget()

    def _over_budget(self) -> bool:
        if self.restarts > self.cfg.restart_budget:
            self.status = FAILED
            return True
        return False


def localize_streams(g: Hlg, imu, compass, wheel, cfg: PipelineConfig = PipelineConfig()) -> PipelineResult:
    return Pipeline(g, cfg).run(imu, compass, wheel)

"""Query sequence generation: stable-heading plateaus of a trajectory.

The EKF heading is unwrapped and examined with a centred window of `win`
samples. A plateau opens where the window's end-to-end heading slope falls
below `slope_gate` and stays open while the window-mean heading remains within
`band` of the plateau mean. Each closed plateau that is long enough and not a
standstill becomes one query segment.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dead_reckoning import TrajectoryPoint
from .errors import InvalidInputError
from .geo import circular_mean, heading_to_unit, wrap_angle

__all__ = [
    "TrajectoryPoint", "QuerySegment", "Query", "QsgConfig", "QuerySegmenter",
    "detect_segments", "segment_stats", "query_to_csv",
]


@dataclass(frozen=True)
class QuerySegment:
    k: int
    theta_mean: float
    theta_var: float
    n_obs: int
    d_mean: float
    d_var: float
    t_start: float
    t_end: float
    points: tuple = field(default=(), repr=False)

    def with_length(self, d_mean: float, d_var: float | None = None) -> "QuerySegment":
        return replace(self, d_mean=float(d_mean), d_var=self.d_var if d_var is None else float(d_var))


@dataclass
class Query:
    segments: list[QuerySegment] = field(default_factory=list)

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def __getitem__(self, i):
        return self.segments[i]


@dataclass(frozen=True)
class QsgConfig:
    win: int = 200
    slope_gate: float = 1e-4
    band: float = math.radians(3.0)
    min_len: float = 100.0
    min_speed: float = 1.0
    d_floor: float = 1.0

    def __post_init__(self):
        if self.win < 10:
            raise InvalidInputError("win must be at least 10 samples")
        if not (self.slope_gate > 0 and self.band > 0 and self.min_len >= 0 and self.d_floor > 0):
            raise InvalidInputError("invalid segmentation thresholds")


def segment_stats(points, k: int = 0, d_floor: float = 1.0) -> QuerySegment:
    """Heading and length statistics of one plateau."""
    if len(points) < 2:
        raise InvalidInputError("a segment needs at least 2 points")
    headings = np.array([p.heading for p in points])
    theta = circular_mean(headings)
    dev = np.array([wrap_angle(h - theta) for h in headings])
    n = len(points)
    ekf_var = float(np.mean([p.heading_var for p in points]))
    theta_var = ekf_var / n + float(np.sum(dev ** 2) / (n - 1))
    a, b = points[0], points[-1]
    delta = np.array([b.pos.x - a.pos.x, b.pos.y - a.pos.y])
    d = float(np.hypot(*delta))
    u = delta / d if d > 0 else heading_to_unit(theta)
    # drift accumulated between the endpoints projected on the segment direction
    d_var = max(float(u @ (b.pos_cov - a.pos_cov) @ u), 0.0) + d_floor
    return QuerySegment(k, theta, max(theta_var, 1e-12), n, d, d_var, a.t, b.t, tuple(points))


class QuerySegmenter:
    """Streaming plateau detector; `push` returns segments closed by that sample."""

    def __init__(self, cfg: QsgConfig = QsgConfig()):
        self.cfg = cfg
        self.h = cfg.win // 2
        self.points: list[TrajectoryPoint] = []
        self._u: list[float] = []
        self._csum: list[float] = [0.0]
        self._open: int | None = None  # plateau start index
        self._sum = 0.0
        self._count = 0
        self._last_eval = -1
        self._k = 0
        self.rejected = 0

    # heading unwrapping keeps window means continuous across the +-pi cut
    def _append(self, p: TrajectoryPoint):
        if self._u:
            u = self._u[-1] + wrap_angle(p.heading - self._u[-1])
        else:
            u = p.heading
        self.points.append(p)
        self._u.append(u)
        self._csum.append(self._csum[-1] + u)

    def push(self, p: TrajectoryPoint) -> list[QuerySegment]:
        if self.points and not p.t > self.points[-1].t:
            raise InvalidInputError("trajectory points must be time-ordered")
        self._append(p)
        j = len(self.points) - 1
        h = self.h
        if j < 2 * h:
            return []
        i = j - h
        self._last_eval = i
        slope = (self._u[j] - self._u[j - 2 * h]) / (2 * h)
        smooth = (self._csum[j + 1] - self._csum[i - h]) / (2 * h + 1)
        out = []
        if self._open is not None:
            mean = self._sum / self._count
            if abs(smooth - mean) <= self.cfg.band:
                self._sum += smooth
                self._count += 1
                return out
            seg = self._close(i - 1)
            if seg is not None:
                out.append(seg)
        if abs(slope) < self.cfg.slope_gate:
            # nothing precedes the stream start, so a plateau there extends to it
            self._open = 0 if i == h else i
            self._sum = smooth
            self._count = 1
        return out

    def _close(self, end: int) -> QuerySegment | None:
        start = self._open
        self._open = None
        if start is None or end - start < 1:
            return None
        pts = self.points[start:end + 1]
        xy = np.array([[q.pos.x, q.pos.y] for q in pts])
        path = float(np.sum(np.hypot(*np.diff(xy, axis=0).T)))
        duration = pts[-1].t - pts[0].t
        if path < self.cfg.min_len or duration <= 0 or path / duration < self.cfg.min_speed:
            self.rejected += 1
            return None
        self._k += 1
        return segment_stats(pts, self._k, self.cfg.d_floor)

    def remap(self, fn, dtheta: float):
        """Replace stored points by fn(point) after a frame change rotating headings by -dtheta."""
        self.points = [fn(p) for p in self.points]
        self._u = [u - dtheta for u in self._u]
        self._csum = [c - k * dtheta for k, c in enumerate(self._csum)]
        self._sum -= self._count * dtheta

    def open_points(self) -> list[TrajectoryPoint]:
        """Points of the plateau currently being tracked (empty if none)."""
        if self._open is None:
            return []
        return self.points[self._open:self._last_eval + 1]

    def flush(self) -> list[QuerySegment]:
        if self._open is None:
            return []
        seg = self._close(len(self.points) - 1)
        return [seg] if seg is not None else []


def detect_segments(traj, win: int = 200, slope_gate: float = 1e-4, min_len: float = 100.0,
                    band: float = math.radians(3.0), min_speed: float = 1.0) -> Query:
    """Batch segmentation of a whole trajectory."""
    seg = QuerySegmenter(QsgConfig(win, slope_gate, band, min_len, min_speed))
    out = []
    for p in traj:
        out.extend(seg.push(p))
    out.extend(seg.flush())
    return Query(out)


def query_to_csv(query: Query) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["k", "theta_mean", "theta_var", "n_obs", "d_mean", "d_var", "t_start", "t_end"])
    for s in query:
        wr.writerow([s.k, repr(s.theta_mean), repr(s.theta_var), s.n_obs, repr(s.d_mean), repr(s.d_var),
                     repr(s.t_start), repr(s.t_end)])
    return buf.getvalue()

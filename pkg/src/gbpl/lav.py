"""Location alignment and verification (LAV).

After a fix, every straight trajectory segment that ends in a turn (the
SSPTE) is rigidly aligned to the waypoints of its matched map segment (the
SSPTM). Points are pulled onto the line fitted through the map waypoints;
soft terms tie the virtual corners of the segment to the first and last
waypoint along that line. The Mahalanobis cost at the optimum is checked
against a chi-square quantile, and accepted alignments reset the EKF pose.
Accumulated map and query lengths give the scale/slip factor (SSF).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import AlignmentFailure, DegenerateGeometryError, InvalidInputError, NoIntersectionError
from .geo import LocalPoint, wrap_angle
from .hlg import tls_fit

NOMINAL = "nominal"
CALIBRATED = "calibrated"
VERIFICATION_MODES = (NOMINAL, CALIBRATED)

__all__ = [
    "Line2", "Sspte", "Ssptm", "Transform2", "AlignmentResult", "SsfEstimate", "SsfAccumulator",
    "LavOutcome", "fit_line", "virtual_point", "virtual_point_cov", "point_to_line", "signed_distances",
    "align", "chi2_threshold", "alignment_dof", "estimate_ssf", "ssf_variance", "lav_cycle",
]


def _perp(v):
    v = np.asarray(v, dtype=float)
    return np.array([-v[..., 1], v[..., 0]]).T if v.ndim > 1 else np.array([-v[1], v[0]])


def _rot(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def _as_xy(points) -> np.ndarray:
    if len(points) and isinstance(points[0], LocalPoint):
        return np.array([[p.x, p.y] for p in points], dtype=float)
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InvalidInputError("points must be an (n, 2) array or LocalPoint list")
    return pts


def _point_covs(point_cov, n: int) -> np.ndarray:
    """Broadcast a scalar variance, one 2x2 matrix or n matrices to shape (n, 2, 2)."""
    if point_cov is None:
        return np.zeros((n, 2, 2))
    c = np.asarray(point_cov, dtype=float)
    if c.ndim == 0:
        return np.broadcast_to(float(c) * np.eye(2), (n, 2, 2)).copy()
    if c.shape == (2, 2):
        return np.broadcast_to(c, (n, 2, 2)).copy()
    if c.shape == (n, 2, 2):
        return c.copy()
    raise InvalidInputError(f"point covariance of shape {c.shape} does not fit {n} points")


# ---------------------------------------------------------------------- lines


@dataclass(frozen=True)
class Line2:
    a: np.ndarray
    b: np.ndarray
    cov: np.ndarray = field(default_factory=lambda: np.zeros((4, 4)))

    def __post_init__(self):
        if np.allclose(self.a, self.b):
            raise DegenerateGeometryError("line reference points coincide")

    @property
    def v(self) -> np.ndarray:
        return self.b - self.a

    @property
    def unit(self) -> np.ndarray:
        return self.v / np.linalg.norm(self.v)

    @property
    def normal(self) -> np.ndarray:
        return _perp(self.unit)


def _tls_line_jacobian(pts: np.ndarray, c, u, r, gap) -> np.ndarray:
    """d[a, b]/d[x_1, y_1, ..., x_n, y_n] for the first/last projections onto the TLS line."""
    n_pts = len(pts)
    n = _perp(u)
    along, across = r @ u, r @ n
    # heading sensitivity of the principal direction to each point
    dpsi = (along[:, None] * n + across[:, None] * u) / gap  # (n, 2)
    proj_c = (np.eye(2) - np.outer(u, u)) / n_pts
    J = np.zeros((4, 2 * n_pts))
    for row, idx in ((0, 0), (2, n_pts - 1)):
        g = across[idx] * u + along[idx] * n
        J[row:row + 2] = np.tile(proj_c, (1, n_pts)) + np.outer(g, dpsi.ravel())
        J[row:row + 2, 2 * idx:2 * idx + 2] += np.outer(u, u)
    return J


def fit_line(points, point_cov=None) -> Line2:
    """Total-least-squares line through `points`.

    The reference points are the projections of the first and last input
    points; `cov` propagates the point covariances through the fit.
    """
    pts = _as_xy(points)
    c, u, r, gap = tls_fit(pts)
    a = c + float(r[0] @ u) * u
    b = c + float(r[-1] @ u) * u
    if np.allclose(a, b):
        raise DegenerateGeometryError("first and last points project to the same place")
    covs = _point_covs(point_cov, len(pts))
    if not np.any(covs):
        return Line2(a, b)
    J = _tls_line_jacobian(pts, c, u, r, gap)
    Jb = J.reshape(4, len(pts), 2)
    cov = np.einsum("aik,ikl,bil->ab", Jb, covs, Jb)
    return Line2(a, b, 0.5 * (cov + cov.T))


def virtual_point(line_q: Line2, line_adj: Line2) -> LocalPoint:
    """Intersection of the segment line with an adjacent segment line."""
    return LocalPoint(*_virtual_xy(line_q.a, line_q.b, line_adj.a, line_adj.b))


def _virtual_xy(a_q, b_q, a_j, b_j) -> np.ndarray:
    v_q, v_j = b_q - a_q, b_j - a_j
    vp = _perp(v_j)
    den = float(vp @ v_q)
    if abs(den) <= 1e-3 * np.linalg.norm(v_q) * np.linalg.norm(v_j):
        raise NoIntersectionError("segment lines are nearly parallel")
    return a_q - (float(vp @ (a_q - a_j)) / den) * v_q


def virtual_point_cov(line_q: Line2, line_adj: Line2, eps: float = 1e-4) -> np.ndarray:
    """Covariance of the virtual point from both line covariances (central differences)."""
    x0 = np.concatenate([line_q.a, line_q.b, line_adj.a, line_adj.b])
    J = np.zeros((2, 8))
    for i in range(8):
        d = np.zeros(8)
        d[i] = eps
        hi, lo = x0 + d, x0 - d
        J[:, i] = (_virtual_xy(*hi.reshape(4, 2)) - _virtual_xy(*lo.reshape(4, 2))) / (2 * eps)
    S = np.zeros((8, 8))
    S[:4, :4], S[4:, 4:] = line_q.cov, line_adj.cov
    cov = J @ S @ J.T
    return 0.5 * (cov + cov.T)


def point_to_line(p: LocalPoint, line: Line2) -> float:
    x = np.array([p.x, p.y]) if isinstance(p, LocalPoint) else np.asarray(p, dtype=float)
    d = line.a - line.b
    w = line.a - x
    return abs(float(w[0] * d[1] - w[1] * d[0])) / float(np.linalg.norm(d))


def signed_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Signed perpendicular distances of `points` to the line a-b (left of a->b positive)."""
    v = b - a
    return ((points[:, 1] - a[1]) * v[0] - (points[:, 0] - a[0]) * v[1]) / np.hypot(*v)


def _distance_line_jacobian(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """d(signed distance)/d[a, b] for every point, shape (n, 4)."""
    v = b - a
    L = float(np.hypot(*v))
    u, n = v / L, _perp(v / L)
    s = (points - a) @ u  # along-line coordinate from a
    dd_db = -(s / L)[:, None] * n
    dd_da = -n + (s / L)[:, None] * n
    return np.hstack([dd_da, dd_db])


# ------------------------------------------------------------------ alignment


@dataclass(frozen=True)
class Transform2:
    angle: float = 0.0
    t: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ _rot(self.angle).T + self.t

    def compose(self, other: "Transform2") -> "Transform2":
        """self after other."""
        return Transform2(wrap_angle(self.angle + other.angle), _rot(self.angle) @ other.t + self.t)

    def inverse(self) -> "Transform2":
        R = _rot(-self.angle)
        return Transform2(-self.angle, -(R @ self.t))


@dataclass
class Sspte:
    """Trajectory points of a straight segment with optional virtual corners."""

    points: np.ndarray
    covs: np.ndarray
    p_s: np.ndarray | None = None
    p_e: np.ndarray | None = None
    cov_s: np.ndarray | None = None
    cov_e: np.ndarray | None = None

    def __post_init__(self):
        self.points = _as_xy(self.points)
        if len(self.points) < 2:
            raise InvalidInputError("an SSPTE needs at least 2 points")
        self.covs = _point_covs(self.covs, len(self.points))
        for name in ("p_s", "p_e"):
            val = getattr(self, name)
            if isinstance(val, LocalPoint):
                setattr(self, name, val.as_array())
        if self.p_s is not None and self.cov_s is None:
            self.cov_s = self.covs[0]
        if self.p_e is not None and self.cov_e is None:
            self.cov_e = self.covs[-1]

    @classmethod
    def from_trajectory(cls, traj, p_s=None, p_e=None, cov_s=None, cov_e=None) -> "Sspte":
        pts = np.array([[p.pos.x, p.pos.y] for p in traj])
        covs = np.array([np.asarray(p.pos_cov, dtype=float) for p in traj])
        return cls(pts, covs, p_s, p_e, cov_s, cov_e)

    def stacked(self):
        """All points in cost order (p_s, p_1..p_n, p_e) with covariances."""
        pts, covs = [self.points], [self.covs]
        if self.p_s is not None:
            pts.insert(0, self.p_s[None])
            covs.insert(0, np.asarray(self.cov_s)[None])
        if self.p_e is not None:
            pts.append(self.p_e[None])
            covs.append(np.asarray(self.cov_e)[None])
        return np.vstack(pts), np.concatenate(covs)


@dataclass
class Ssptm:
    """Map waypoints of the matched straight path.

    `pieces` optionally splits the waypoints into the per-vertex lists of a
    multi-vertex path; each piece gets its own fitted line. `start` and `end`
    are the map corners matched to the query's virtual points (default: the
    first and last waypoints).
    """

    points: np.ndarray
    sigma_g: float
    pieces: list | None = None
    start: np.ndarray | None = None
    end: np.ndarray | None = None

    def __post_init__(self):
        self.points = _as_xy(self.points)
        if len(self.points) < 2:
            raise InvalidInputError("an SSPTM needs at least 2 points")
        if not self.sigma_g > 0:
            raise InvalidInputError("sigma_g must be positive")
        self.pieces = [self.points] if not self.pieces else [_as_xy(p) for p in self.pieces]
        self.start = self.points[0] if self.start is None else np.asarray(self.start, dtype=float)
        self.end = self.points[-1] if self.end is None else np.asarray(self.end, dtype=float)

    def line(self) -> Line2:
        return fit_line(self.points, self.sigma_g ** 2)

    def lines(self) -> list[Line2]:
        return [fit_line(p, self.sigma_g ** 2) for p in self.pieces]


@dataclass
class AlignmentResult:
    transform: Transform2
    cost: float
    dof: int
    threshold: float
    accepted: bool
    aligned_points: np.ndarray
    initial_cost: float
    pose_cov: np.ndarray  # (x, y, heading) of the last SSPTE point
    rounds: int
    residuals: np.ndarray = field(repr=False, default=None)
    param_cov: np.ndarray = field(repr=False, default=None)  # over (angle, shift) about `center`
    params: np.ndarray = field(repr=False, default=None)
    center: np.ndarray = field(repr=False, default=None)
    init: Transform2 = field(repr=False, default_factory=Transform2)

    def pose_cov_at(self, p) -> np.ndarray:
        """Covariance of the aligned (x, y, heading) of an unaligned point p."""
        q = self.init.apply(np.asarray(p, dtype=float)) - self.center
        G = np.zeros((3, 3))
        G[:2, 0] = _rot(self.params[0] + math.pi / 2) @ q
        G[:2, 1:] = np.eye(2)
        G[2, 0] = -1.0  # heading is clockwise while the rotation is counter-clockwise
        cov = G @ self.param_cov @ G.T
        return 0.5 * (cov + cov.T)

    def pose_at(self, p, heading: float):
        xy = self.transform.apply(np.asarray(p, dtype=float))
        return LocalPoint(float(xy[0]), float(xy[1])), wrap_angle(heading - self.transform.angle)


def alignment_dof(n_residuals: int, mode: str = CALIBRATED) -> int:
    """Degrees of freedom of the verification statistic.

    `nominal` counts two per residual; `calibrated` counts one per residual
    minus the two line parameters (offset, angle) the rigid fit absorbs.
    """
    if mode == NOMINAL:
        return 2 * n_residuals
    if mode == CALIBRATED:
        return max(n_residuals - 2, 1)
    raise InvalidInputError(f"unknown verification mode {mode!r}")


def chi2_threshold(dof: int, alpha: float) -> float:
    return float(stats.chi2.isf(alpha, dof))


class _Problem:
    """Residuals of the alignment in the parameters (angle, shift) about the SSPTE centroid.

    Every point is measured against the line of the map piece nearest to it
    at the start of each outer round.
    """

    def __init__(self, sspte: Sspte, ssptm: Ssptm, mode: str, sigma_rot: float):
        self.sigma_rot = sigma_rot
        self.pts, self.covs = sspte.stacked()
        self.center = sspte.points.mean(axis=0)
        self.q = self.pts - self.center
        self.lines = ssptm.lines()
        self.mode = mode
        self.assign = np.zeros(len(self.pts), dtype=int)
        self._set_lines()
        self.ends = []
        sg2 = ssptm.sigma_g ** 2
        u0, u1 = self.lines[0].unit, self.lines[-1].unit
        if sspte.p_s is not None:
            self.ends.append((0, ssptm.start, u0, sg2 + float(u0 @ sspte.cov_s @ u0)))
        if sspte.p_e is not None:
            self.ends.append((len(self.pts) - 1, ssptm.end, u1, sg2 + float(u1 @ sspte.cov_e @ u1)))

    def _set_lines(self):
        idx = self.assign
        self.A = np.array([self.lines[i].a for i in idx])
        self.N = np.array([self.lines[i].normal for i in idx])

    def reassign(self, x):
        if len(self.lines) == 1:
            return
        moved = self.moved(x)
        dist = np.empty((len(moved), len(self.lines)))
        for j, ln in enumerate(self.lines):
            v = ln.v
            s = np.clip((moved - ln.a) @ v / float(v @ v), 0.0, 1.0)
            dist[:, j] = np.hypot(*(moved - ln.a - s[:, None] * v).T)
        self.assign = np.argmin(dist, axis=1)
        self._set_lines()

    def transform(self, x) -> Transform2:
        R = _rot(x[0])
        return Transform2(float(x[0]), self.center + x[1:] - R @ self.center)

    def moved(self, x):
        return self.q @ _rot(x[0]).T + self.center + x[1:]

    def distances(self, x):
        return np.einsum("ij,ij->i", self.moved(x) - self.A, self.N)

    def sigma_c(self, x) -> np.ndarray:
        """Covariance of the distance residuals at x (diagonal in `nominal` mode)."""
        R = _rot(x[0])
        nr = self.N @ R  # rows: R^T n
        point_var = np.einsum("ni,nij,nj->n", nr, self.covs, nr)
        full = np.diag(point_var)
        moved = self.moved(x)
        for j, ln in enumerate(self.lines):
            m = np.flatnonzero(self.assign == j)
            if len(m) == 0:
                continue
            J = _distance_line_jacobian(moved[m], ln.a, ln.b)
            full[np.ix_(m, m)] += J @ ln.cov @ J.T
        if self.mode == NOMINAL:
            return np.diag(np.diag(full))
        return full

    def whitener(self, x) -> np.ndarray:
        S = self.sigma_c(x)
        S = S + 1e-12 * np.eye(len(S)) * max(float(np.trace(S)) / len(S), 1e-12)
        return np.linalg.inv(np.linalg.cholesky(S))

    def residuals(self, x, W, lam: float):
        """Whitened distances, rotation prior and the along-line endpoint term, with the Jacobian."""
        moved = self.moved(x)
        d = np.einsum("ij,ij->i", moved - self.A, self.N)
        dR = _rot(x[0] + math.pi / 2)  # derivative of the rotation matrix
        rq = self.q @ dR.T
        Jd = np.column_stack([np.einsum("ij,ij->i", rq, self.N), self.N])
        res = [W @ d, [x[0] / self.sigma_rot]]
        jac = [W @ Jd, np.array([[1.0 / self.sigma_rot, 0.0, 0.0]])]
        if self.ends:
            # mean along-line offset of the corners: pins the shift along the
            # line without letting a length mismatch tilt the fit
            k = len(self.ends)
            w = math.sqrt(lam / (sum(e[3] for e in self.ends) / k ** 2))
            off = sum(float(u @ (moved[i] - tgt)) for i, tgt, u, _ in self.ends) / k
            dphi = sum(float(u @ rq[i]) for i, _, u, _ in self.ends) / k
            du = sum(u for _, _, u, _ in self.ends) / k
            res.append(np.array([w * off]))
            jac.append(w * np.concatenate([[dphi], du])[None])
        return np.concatenate(res), np.vstack(jac)

    def cost(self, x, W=None) -> float:
        """Verification statistic: whitened distances plus the rotation prior."""
        W = self.whitener(x) if W is None else W
        r = W @ self.distances(x)
        return float(r @ r) + (x[0] / self.sigma_rot) ** 2


def _lm(problem: _Problem, x0, W, lam, max_iter: int = 50):
    x = np.asarray(x0, dtype=float).copy()
    r, J = problem.residuals(x, W, lam)
    f = float(r @ r)
    mu = 1e-3
    for _ in range(max_iter):
        A = J.T @ J
        g = J.T @ r
        step = np.linalg.solve(A + mu * np.diag(np.diag(A) + 1e-12), -g)
        x_new = x + step
        r_new, J_new = problem.residuals(x_new, W, lam)
        f_new = float(r_new @ r_new)
        if f_new <= f:
            x, r, J, f = x_new, r_new, J_new, f_new
            mu = max(mu / 10, 1e-12)
            if np.linalg.norm(step) < 1e-12 * (1 + np.linalg.norm(x)):
                break
        else:
            mu *= 10
            if mu > 1e12:
                break
    return x


def align(sspte: Sspte, ssptm: Ssptm, init: Transform2 | None = None, alpha: float = 0.05,
          lambda0: float = 0.01, lambda_factor: float = 10.0, tol: float = 1e-4, max_rounds: int = 12,
          mode: str = CALIBRATED, sigma_rot: float = math.radians(5.0)) -> AlignmentResult:
    """Rigid alignment of an SSPTE to the line through its SSPTM, with verification.

    `init` is applied to the SSPTE first (identity by default); the returned
    transform includes it. Soft endpoint terms act along the map line, the
    direction the point-to-line cost leaves free. A Gaussian prior of width
    `sigma_rot` on the residual rotation keeps the fit from swinging onto a
    crossing street; it counts towards the verification cost.
    """
    if mode not in VERIFICATION_MODES:
        raise InvalidInputError(f"unknown verification mode {mode!r}")
    if not 0 < alpha < 1:
        raise InvalidInputError("alpha must lie in (0, 1)")
    init = init or Transform2()
    if init.angle != 0.0 or np.any(init.t):
        R = _rot(init.angle)
        covs = np.einsum("ij,njk,lk->nil", R, sspte.covs, R)
        moved = Sspte(init.apply(sspte.points), covs,
                      None if sspte.p_s is None else init.apply(sspte.p_s),
                      None if sspte.p_e is None else init.apply(sspte.p_e),
                      None if sspte.cov_s is None else R @ sspte.cov_s @ R.T,
                      None if sspte.cov_e is None else R @ sspte.cov_e @ R.T)
    else:
        moved = sspte
    if not sigma_rot > 0:
        raise InvalidInputError("sigma_rot must be positive")
    prob = _Problem(moved, ssptm, mode, sigma_rot)
    x = np.zeros(3)
    prob.reassign(x)
    initial_cost = prob.cost(x)
    lam = lambda0
    rounds = 0
    increases = 0
    last_cost = initial_cost
    for rounds in range(1, max_rounds + 1):
        prob.reassign(x)
        W = prob.whitener(x)
        x_new = _lm(prob, x, W, lam)
        change = float(np.linalg.norm(x_new - x))
        x = x_new
        c = prob.cost(x)
        if change < tol and rounds > 1:
            break
        # a stiffer endpoint penalty may raise the cost slightly; only material rises count
        increases = increases + 1 if c > last_cost * (1 + 1e-6) + 1e-9 else 0
        if increases >= 5:
            raise AlignmentFailure("alignment cost increased over 5 consecutive rounds")
        last_cost = c
        lam *= lambda_factor
    W = prob.whitener(x)
    d = prob.distances(x)
    cost = prob.cost(x, W)
    dof = alignment_dof(len(d), mode)
    thr = chi2_threshold(dof, alpha)
    T = prob.transform(x).compose(init)
    # Gauss-Newton parameter covariance with unit-weight endpoint terms
    _, J = prob.residuals(x, W, 1.0)
    cov_x = np.linalg.pinv(J.T @ J)
    res = AlignmentResult(T, cost, dof, thr, cost <= thr, T.apply(sspte.points), initial_cost,
                          np.zeros((3, 3)), rounds, d, cov_x, x, prob.center, init)
    res.pose_cov = res.pose_cov_at(sspte.points[-1])
    return res


# ------------------------------------------------------------------------ SSF


@dataclass(frozen=True)
class SsfEstimate:
    s_ssf: float
    variance: float
    L_q: float
    L_g: float
    n_s: int


def ssf_variance(L_q: float, L_g: float, n_s: int, sigma_g: float, sum_query_var: float) -> float:
    return (2 * n_s * sigma_g ** 2 + (L_g / L_q) ** 2 * sum_query_var) / L_q ** 2


def estimate_ssf(map_lengths, query_lengths, query_vars, sigma_g: float) -> SsfEstimate:
    """Ratio of accumulated map to query lengths and its propagated variance."""
    d = np.asarray(map_lengths, dtype=float)
    dq = np.asarray(query_lengths, dtype=float)
    vq = np.asarray(query_vars, dtype=float)
    if not (d.shape == dq.shape == vq.shape) or d.ndim != 1 or len(d) == 0:
        raise InvalidInputError("map lengths, query lengths and variances must be equal-length lists")
    if np.any(d <= 0) or np.any(dq <= 0) or np.any(vq < 0):
        raise InvalidInputError("lengths must be positive and variances non-negative")
    L_g, L_q = float(d.sum()), float(dq.sum())
    var = ssf_variance(L_q, L_g, len(d), sigma_g, float(vq.sum()))
    return SsfEstimate(L_g / L_q, var, L_q, L_g, len(d))


@dataclass
class SsfAccumulator:
    """Cumulative SSF estimate over segments aligned since the last fix."""

    sigma_g: float
    map_lengths: list = field(default_factory=list)
    query_lengths: list = field(default_factory=list)
    query_vars: list = field(default_factory=list)

    def add(self, d_map: float, d_query: float, var_query: float) -> SsfEstimate:
        self.map_lengths.append(float(d_map))
        self.query_lengths.append(float(d_query))
        self.query_vars.append(float(var_query))
        return self.estimate()

    def estimate(self) -> SsfEstimate | None:
        if not self.map_lengths:
            return None
        return estimate_ssf(self.map_lengths, self.query_lengths, self.query_vars, self.sigma_g)

    def clear(self):
        self.map_lengths.clear()
        self.query_lengths.clear()
        self.query_vars.clear()


# ------------------------------------------------------------------ LAV cycle


@dataclass
class LavOutcome:
    accepted: bool
    result: AlignmentResult | None
    pose: tuple | None = None  # (LocalPoint, heading) for the EKF reset
    pose_cov: np.ndarray | None = None
    ssf: SsfEstimate | None = None
    restart: bool = False
    d_query: float | None = None
    d_map: float | None = None


def _segment_line(traj) -> Line2:
    pts = np.array([[p.pos.x, p.pos.y] for p in traj])
    covs = np.array([np.asarray(p.pos_cov, dtype=float) for p in traj])
    return fit_line(pts, covs)


def lav_cycle(segment, map_points, sigma_g: float, init: Transform2 | None = None, prev=None, nxt=None,
              accumulator: SsfAccumulator | None = None, alpha: float = 0.05, mode: str = CALIBRATED,
              s_mean: float = 1.0, query_var: float = 1.0, current=None, map_pieces=None,
              max_points: int = 200, map_start=None, map_end=None) -> LavOutcome:
    """One alignment after a turn.

    `segment`, `prev` and `nxt` are trajectory point lists of the segment and
    its neighbours; missing neighbours drop the matching endpoint term.
    `map_start`/`map_end` are the map corners built the same way as the
    virtual points (intersections of adjacent street lines).
    Accepted cycles with both virtual corners feed the SSF accumulator with
    the query length divided by `s_mean`, the mean filter scale over the
    segment, so the ratio estimates the absolute wheel factor. The reset pose
    is the aligned `current` trajectory point (segment end by default).
    Segments longer than `max_points` are thinned evenly before alignment,
    since consecutive filter outputs are far from independent.
    """
    line_q = _segment_line(segment)
    p_s = p_e = cov_s = cov_e = None
    for adj, which in ((prev, "s"), (nxt, "e")):
        if adj is None or len(adj) < 2:
            continue
        try:
            line_adj = _segment_line(adj)
            p = virtual_point(line_q, line_adj).as_array()
            cov = virtual_point_cov(line_q, line_adj)
        except (NoIntersectionError, DegenerateGeometryError):
            continue
        if which == "s":
            p_s, cov_s = p, cov + np.asarray(segment[0].pos_cov)
        else:
            p_e, cov_e = p, cov + np.asarray(segment[-1].pos_cov)
    if len(segment) > max_points:
        keep = np.unique(np.linspace(0, len(segment) - 1, max_points).round().astype(int))
        segment = [segment[i] for i in keep]
    sspte = Sspte.from_trajectory(segment, p_s, p_e, cov_s, cov_e)
    ssptm = Ssptm(map_points, sigma_g, map_pieces, map_start, map_end)
    try:
        res = align(sspte, ssptm, init, alpha=alpha, mode=mode)
    except AlignmentFailure:
        return LavOutcome(False, None, restart=True)
    if not res.accepted:
        return LavOutcome(False, res, restart=True)
    ref = current if current is not None else segment[-1]
    ref_xy = np.array([ref.pos.x, ref.pos.y])
    pose = res.pose_at(ref_xy, ref.heading)
    pose_cov = res.pose_cov_at(ref_xy)
    est = None
    d_q = d_m = None
    if p_s is not None and p_e is not None:
        d_q = float(np.linalg.norm(p_e - p_s)) / s_mean
        d_m = float(np.linalg.norm(ssptm.end - ssptm.start))
        if accumulator is not None:
            est = accumulator.add(d_m, d_q, query_var / s_mean ** 2)
    return LavOutcome(True, res, pose, pose_cov, est, False, d_q, d_m)

"""EKF dead reckoning from IMU, compass and wheel speed.

State layout (10): position p (0:3), velocity v (3:6), Euler angles
[alpha, beta, gamma] (6:9) and the wheel scale/slip factor s (9). The inertial
frame is local ENU; gamma is the compass heading (clockwise from north), so
the yaw about +z is psi = pi/2 - gamma. The body frame is x forward, y left,
z up and R_B->I = Rz(psi) Ry(beta) Rx(alpha).
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InitializationError, InvalidInputError, StreamOrderError
from .geo import LocalPoint, circular_mean, circular_std, wrap_angle

log = logging.getLogger(__name__)

GRAVITY = np.array([0.0, 0.0, -9.8])
IDX_POS = slice(0, 3)
IDX_VEL = slice(3, 6)
IDX_ALPHA, IDX_BETA, IDX_GAMMA, IDX_S = 6, 7, 8, 9
POSE_IDX = [0, 1, IDX_GAMMA]


@dataclass(frozen=True)
class ImuSample:
    t: float
    accel: tuple[float, float, float]
    gyro: tuple[float, float, float]


@dataclass(frozen=True)
class CompassSample:
    t: float
    phi: float


@dataclass(frozen=True)
class WheelSample:
    t: float
    speed: float

    def __post_init__(self):
        if not self.speed >= 0:
            raise InvalidInputError(f"negative wheel speed {self.speed}")


@dataclass(frozen=True)
class NoiseConfig:
    accel_psd: float = 1e-3
    gyro_psd: float = 1e-5
    r_vel_constraint: float = 0.05 ** 2
    r_compass: float = math.radians(2.0) ** 2
    r_wheel: float = 0.1 ** 2
    r_ssf: float = 1e-4
    compass_gate: float = math.radians(20.0)
    ssf_psd: float = 1e-6  # random walk of s per second (tire wear, load, slip regime)

    def __post_init__(self):
        for name in ("accel_psd", "gyro_psd", "r_vel_constraint", "r_compass", "r_wheel", "r_ssf", "compass_gate"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")
        if self.ssf_psd < 0:
            raise InvalidInputError("ssf_psd must be non-negative")


@dataclass(frozen=True)
class SsfMeasurement:
    """Scale/slip factor observation (value and variance)."""

    s_ssf: float
    variance: float


@dataclass
class EkfState:
    x: np.ndarray
    P: np.ndarray
    t: float
    phi0: float
    compass_rejected: int = 0

    @property
    def p(self) -> np.ndarray:
        return self.x[IDX_POS]

    @property
    def v(self) -> np.ndarray:
        return self.x[IDX_VEL]

    @property
    def theta(self) -> np.ndarray:
        return self.x[6:9]

    @property
    def s(self) -> float:
        return float(self.x[IDX_S])

    def copy(self) -> "EkfState":
        return replace(self, x=self.x.copy(), P=self.P.copy())


@dataclass(frozen=True)
class TrajectoryPoint:
    t: float
    pos: LocalPoint
    heading: float
    pos_cov: np.ndarray
    heading_var: float
    s: float = 1.0
    speed: float = 0.0


# ----------------------------------------------------------------- kinematics


def rotation(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Body-to-inertial rotation."""
    return _rotation_and_partials(alpha, beta, gamma)[0]


def _rotation_and_partials(alpha, beta, gamma):
    psi = math.pi / 2 - gamma
    ca, sa = math.cos(alpha), math.sin(alpha)
    cb, sb = math.cos(beta), math.sin(beta)
    cp, sp = math.cos(psi), math.sin(psi)
    rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
    ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    rz = np.array([[cp, -sp, 0], [sp, cp, 0], [0, 0, 1]])
    drx = np.array([[0, 0, 0], [0, -sa, -ca], [0, ca, -sa]])
    dry = np.array([[-sb, 0, cb], [0, 0, 0], [-cb, 0, -sb]])
    drz = np.array([[-sp, -cp, 0], [cp, -sp, 0], [0, 0, 0]])
    ryx = ry @ rx
    r = rz @ ryx
    return r, rz @ ry @ drx, rz @ dry @ rx, -drz @ ryx


def euler_rates(alpha: float, beta: float, omega) -> tuple[np.ndarray, np.ndarray]:
    """Euler-angle rates [alpha, beta, gamma] for body rates and their angle Jacobian (3x2)."""
    wx, wy, wz = omega
    ca, sa = math.cos(alpha), math.sin(alpha)
    cb = math.cos(beta)
    tb = math.tan(beta)
    a1 = sa * wy + ca * wz
    a2 = ca * wy - sa * wz
    rates = np.array([wx + tb * a1, a2, -a1 / cb])
    jac = np.array([
        [tb * a2, a1 / cb ** 2],
        [-a1, 0.0],
        [-a2 / cb, -a1 * math.sin(beta) / cb ** 2],
    ])
    return rates, jac


# --------------------------------------------------------------- initialization


def init_heading(compass, window: int = 50, gate: float = math.radians(2.0)) -> float:
    """Circular mean of the first window of compass readings that is stable."""
    phis = np.array([c.phi for c in compass], dtype=float)
    if len(phis) < window:
        raise InitializationError(f"need {window} compass samples, got {len(phis)}")
    last_start = min(len(phis) - window, 4 * window)
    for i in range(last_start + 1):
        w = phis[i:i + window]
        if circular_std(w) < gate:
            return circular_mean(w)
    raise InitializationError("compass never stabilized within the initialization budget")


def init_state(phi0: float, t0: float = 0.0, heading_var: float = math.radians(2.0) ** 2,
               s0: float = 1.0, s_var: float = 0.04) -> EkfState:
    x = np.zeros(10)
    x[IDX_GAMMA] = wrap_angle(phi0)
    x[IDX_S] = s0
    P = np.zeros((10, 10))
    P[3:6, 3:6] = np.eye(3) * 0.01
    P[IDX_ALPHA, IDX_ALPHA] = P[IDX_BETA, IDX_BETA] = math.radians(1.0) ** 2
    P[IDX_GAMMA, IDX_GAMMA] = heading_var
    P[IDX_S, IDX_S] = s_var
    return EkfState(x, P, float(t0), float(phi0))


# ------------------------------------------------------------------- predict


def predict(state: EkfState, imu: ImuSample, noise: NoiseConfig = NoiseConfig()) -> EkfState:
    tau = imu.t - state.t
    if not tau > 0:
        raise StreamOrderError(f"IMU timestamp {imu.t} not after state time {state.t}")
    x = state.x
    alpha, beta, gamma = x[6:9]
    if abs(beta) > math.radians(80.0):
        log.warning("pitch %.1f deg is close to gimbal lock", math.degrees(beta))
    a = np.asarray(imu.accel, dtype=float)
    r, dra, drb, drg = _rotation_and_partials(alpha, beta, gamma)
    rates, jrates = euler_rates(alpha, beta, imu.gyro)

    xn = x.copy()
    xn[IDX_POS] = x[IDX_POS] + tau * x[IDX_VEL]
    xn[IDX_VEL] = x[IDX_VEL] + tau * (r @ a + GRAVITY)
    xn[6:9] = x[6:9] + tau * rates
    xn[IDX_GAMMA] = wrap_angle(xn[IDX_GAMMA])

    F = np.eye(10)
    F[0:3, 3:6] = tau * np.eye(3)
    F[3:6, 6] = tau * (dra @ a)
    F[3:6, 7] = tau * (drb @ a)
    F[3:6, 8] = tau * (drg @ a)
    F[6:9, 6:8] += tau * jrates
    Q = np.zeros(10)
    Q[3:6] = noise.accel_psd * tau
    Q[6:9] = noise.gyro_psd * tau
    Q[IDX_S] = noise.ssf_psd * tau
    P = F @ state.P @ F.T + np.diag(Q)
    return replace(state, x=xn, P=0.5 * (P + P.T), t=float(imu.t))


# ------------------------------------------------------------------- updates


def _update(state: EkfState, innov, H, R) -> EkfState:
    """Joseph-form Kalman update; returns a new state."""
    innov = np.atleast_1d(np.asarray(innov, dtype=float))
    H = np.atleast_2d(H)
    R = np.atleast_2d(R)
    P = state.P
    PHt = P @ H.T
    S = H @ PHt + R
    K = np.linalg.solve(S.T, PHt.T).T
    x = state.x + K @ innov
    x[IDX_GAMMA] = wrap_angle(x[IDX_GAMMA])
    ikh = np.eye(10) - K @ H
    P = ikh @ P @ ikh.T + K @ R @ K.T
    return replace(state, x=x, P=0.5 * (P + P.T))


def body_velocity(state: EkfState) -> np.ndarray:
    return rotation(*state.x[6:9]).T @ state.x[IDX_VEL]


def update_velocity_constraint(state: EkfState, noise: NoiseConfig = NoiseConfig()) -> EkfState:
    """Zero lateral and vertical body velocity pseudo-measurement."""
    v = state.x[IDX_VEL]
    r, dra, drb, drg = _rotation_and_partials(*state.x[6:9])
    h = (r.T @ v)[1:3]
    H = np.zeros((2, 10))
    H[:, 3:6] = r.T[1:3]
    H[:, 6] = (dra.T @ v)[1:3]
    H[:, 7] = (drb.T @ v)[1:3]
    H[:, 8] = (drg.T @ v)[1:3]
    return _update(state, -h, H, np.eye(2) * noise.r_vel_constraint)


def update_compass(state: EkfState, c: CompassSample, noise: NoiseConfig = NoiseConfig()) -> EkfState:
    innov = wrap_angle(c.phi - state.x[IDX_GAMMA])
    if abs(innov) > noise.compass_gate:
        return replace(state, compass_rejected=state.compass_rejected + 1)
    H = np.zeros(10)
    H[IDX_GAMMA] = 1.0
    return _update(state, innov, H, noise.r_compass)


def wheel_residual(state: EkfState, w: WheelSample) -> float:
    """Model value h = |v| - s * w (zero for a consistent state)."""
    return float(np.linalg.norm(state.x[IDX_VEL]) - state.x[IDX_S] * w.speed)


def update_wheel(state: EkfState, w: WheelSample, noise: NoiseConfig = NoiseConfig()) -> EkfState:
    v = state.x[IDX_VEL]
    speed = float(np.linalg.norm(v))
    if speed < 0.1:
        return state
    s = state.x[IDX_S]
    H = np.zeros(10)
    H[3:6] = v / speed
    # slope in s taken at the predicted wheel speed |v|/s: using the noisy reading
    # here makes wheel noise a regressor error and drags s toward zero
    H[IDX_S] = -speed / s
    return _update(state, -wheel_residual(state, w), H, noise.r_wheel * s * s)


def update_ssf(state: EkfState, est) -> EkfState:
    if not est.variance > 0:
        raise InvalidInputError("SSF variance must be positive")
    H = np.zeros(10)
    H[IDX_S] = 1.0
    return _update(state, est.s_ssf - state.x[IDX_S], H, est.variance)


def reset_from_alignment(state: EkfState, aligned_pose, pose_cov) -> EkfState:
    """Hard reset of planar position and heading with decorrelated covariance."""
    point, heading = aligned_pose
    pose_cov = np.asarray(pose_cov, dtype=float)
    if pose_cov.shape != (3, 3) or not np.allclose(pose_cov, pose_cov.T, atol=1e-12) \
            or np.linalg.eigvalsh(pose_cov).min() < -1e-9:
        raise InvalidInputError("pose covariance must be a symmetric PSD 3x3 matrix")
    x = state.x.copy()
    x[0], x[1] = point.x, point.y
    x[IDX_GAMMA] = wrap_angle(heading)
    P = state.P.copy()
    P[POSE_IDX, :] = 0.0
    P[:, POSE_IDX] = 0.0
    P[np.ix_(POSE_IDX, POSE_IDX)] = pose_cov
    return replace(state, x=x, P=P)


def is_psd(P, tol: float = 1e-9) -> bool:
    return bool(np.allclose(P, P.T) and np.linalg.eigvalsh(P).min() >= -tol)


# ------------------------------------------------------------ stream filtering


def to_trajectory_point(state: EkfState) -> TrajectoryPoint:
    x = state.x
    return TrajectoryPoint(
        t=state.t, pos=LocalPoint(float(x[0]), float(x[1])), heading=float(x[IDX_GAMMA]),
        pos_cov=state.P[0:2, 0:2].copy(), heading_var=float(state.P[IDX_GAMMA, IDX_GAMMA]),
        s=float(x[IDX_S]), speed=float(np.hypot(x[3], x[4])),
    )


@dataclass
class DeadReckoner:
    """Runs the EKF over time-sorted sensor streams, one IMU tick at a time.

    Per tick: predict, velocity constraint, then the latest not yet consumed
    compass and wheel samples stamped at or before the tick.
    """

    noise: NoiseConfig = field(default_factory=NoiseConfig)
    init_window: int = 50
    state: EkfState | None = None

    def start(self, compass, t0: float, s0: float = 1.0) -> EkfState:
        phi0 = init_heading(compass, self.init_window)
        self.state = init_state(phi0, t0, self.noise.r_compass, s0)
        return self.state

    def tick(self, imu: ImuSample, compass: CompassSample | None = None,
             wheel: WheelSample | None = None) -> TrajectoryPoint:
        st = predict(self.state, imu, self.noise)
        st = update_velocity_constraint(st, self.noise)
        if compass is not None:
            st = update_compass(st, compass, self.noise)
        if wheel is not None:
            st = update_wheel(st, wheel, self.noise)
        self.state = st
        return to_trajectory_point(st)


def schedule(imu, compass, wheel):
    """Yield (imu, compass | None, wheel | None) per IMU tick.

    The aiding sample is the most recent unconsumed one stamped at or before
    the tick; older unconsumed samples are dropped.
    """
    for name, stream in (("imu", imu), ("compass", compass), ("wheel", wheel)):
        ts = [s.t for s in stream]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise StreamOrderError(f"{name} stream is not strictly increasing")
    ci = wi = 0
    for sample in imu:
        c = w = None
        while ci < len(compass) and compass[ci].t <= sample.t:
            c = compass[ci]
            ci += 1
        while wi < len(wheel) and wheel[wi].t <= sample.t:
            w = wheel[wi]
            wi += 1
        yield sample, c, w


def run_filter(imu, compass, wheel, noise: NoiseConfig = NoiseConfig(), init_window: int = 50,
               s0: float = 1.0) -> tuple[list[TrajectoryPoint], EkfState]:
    """Filter whole streams; the first IMU sample only fixes the start time."""
    if not imu:
        raise InvalidInputError("empty IMU stream")
    dr = DeadReckoner(noise, init_window)
    dr.start(compass, imu[0].t, s0)
    traj = [to_trajectory_point(dr.state)]
    for sample, c, w in schedule(imu[1:], [c for c in compass if c.t > imu[0].t],
                                 [w for w in wheel if w.t > imu[0].t]):
        traj.append(dr.tick(sample, c, w))
    return traj, dr.state


# ------------------------------------------------------------------ CSV format

CSV_HEADER = ["t", "kind", "a0", "a1", "a2", "g0", "g1", "g2"]


def write_sensor_csv(imu, compass, wheel) -> str:
    rows = [(s.t, 0, ["imu", *map(repr, s.accel), *map(repr, s.gyro)]) for s in imu]
    rows += [(s.t, 1, ["compass", repr(s.phi)]) for s in compass]
    rows += [(s.t, 2, ["wheel", repr(s.speed)]) for s in wheel]
    rows.sort(key=lambda r: (r[0], r[1]))
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_HEADER)
    for t, _, rest in rows:
        wr.writerow([repr(float(t)), *rest])
    return buf.getvalue()


def read_sensor_csv(text: str):
    """Parse a sensor log into (imu, compass, wheel) lists."""
    rd = csv.reader(io.StringIO(text))
    header = next(rd, None)
    if header is None or [h.strip() for h in header[:2]] != ["t", "kind"]:
        raise InvalidInputError("sensor log needs a header row starting with t,kind")
    imu, compass, wheel = [], [], []
    for lineno, row in enumerate(rd, start=2):
        if not row:
            continue
        try:
            t = float(row[0])
            kind = row[1].strip()
            if kind == "imu":
                vals = [float(v) for v in row[2:8]]
                if len(vals) != 6:
                    raise ValueError("imu row needs 6 values")
                imu.append(ImuSample(t, tuple(vals[:3]), tuple(vals[3:])))
            elif kind == "compass":
                compass.append(CompassSample(t, float(row[2])))
            elif kind == "wheel":
                wheel.append(WheelSample(t, float(row[2])))
            else:
                raise ValueError(f"unknown kind {kind!r}")
        except (ValueError, IndexError) as exc:
            raise InvalidInputError(f"line {lineno}: {exc}") from exc
    for name, stream in (("imu", imu), ("compass", compass), ("wheel", wheel)):
        ts = [s.t for s in stream]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise StreamOrderError(f"{name} rows are not time-sorted")
    return imu, compass, wheel

import math

import numpy as np
import pytest

from gbpl.dead_reckoning import (
    CompassSample,
    ImuSample,
    NoiseConfig,
    SsfMeasurement,
    WheelSample,
    body_velocity,
    init_heading,
    init_state,
    is_psd,
    predict,
    read_sensor_csv,
    reset_from_alignment,
    update_compass,
    update_ssf,
    update_velocity_constraint,
    update_wheel,
    wheel_residual,
    write_sensor_csv,
)
from gbpl.errors import InitializationError, InvalidInputError, StreamOrderError
from gbpl.geo import LocalPoint, angle_diff

G_UP = (0.0, 0.0, 9.8)


def _state(gamma=0.0, v=(0, 0, 0), s=1.0):
    st = init_state(gamma)
    st.x[3:6] = v
    st.x[9] = s
    return st


# ----------------------------------------------------------- initialization


def test_init_heading_constant():
    assert init_heading([CompassSample(0.1 * i, 0.5) for i in range(60)]) == pytest.approx(0.5)


def test_init_heading_branch_cut():
    comp = [CompassSample(0.1 * i, math.pi - 0.001 if i % 2 else -math.pi + 0.001) for i in range(60)]
    assert abs(angle_diff(init_heading(comp), math.pi)) < 1e-9


def test_init_heading_noisy_fails():
    rng = np.random.default_rng(0)
    comp = [CompassSample(0.1 * i, float(rng.normal(0, math.radians(10)))) for i in range(300)]
    with pytest.raises(InitializationError):
        init_heading(comp)


def test_init_heading_too_short():
    with pytest.raises(InitializationError):
        init_heading([CompassSample(0.0, 0.0)])


def test_init_state_layout():
    st = init_state(0.7, t0=2.0)
    assert st.theta.tolist() == [0, 0, 0.7]
    assert st.s == 1.0 and not st.p.any() and not st.v.any()


# ------------------------------------------------------------------ predict


def test_stationary_level_body_stays_put():
    st = _state(gamma=0.3)
    for k in range(1, 101):
        st = predict(st, ImuSample(0.01 * k, G_UP, (0, 0, 0)))
    assert np.allclose(st.p, 0, atol=1e-12) and np.allclose(st.v, 0, atol=1e-12)


def test_constant_velocity_integration():
    st = _state(gamma=math.pi / 2, v=(1, 0, 0))
    for k in range(1, 101):
        st = predict(st, ImuSample(0.01 * k, G_UP, (0, 0, 0)))
    np.testing.assert_allclose(st.p, [1, 0, 0], atol=1e-9)


def test_yaw_rate_kinematics():
    wz = 0.2
    st = _state(gamma=0.0)
    for k in range(1, 51):
        st = predict(st, ImuSample(0.01 * k, G_UP, (0, 0, wz)))
        # counter-clockwise body rate lowers the clockwise compass heading
        assert st.theta[2] == pytest.approx(-0.01 * wz * k, abs=1e-12)


def test_predict_keeps_s_and_rejects_time_reversal():
    st = _state(s=1.07)
    st2 = predict(st, ImuSample(0.01, (0.3, 0.1, 9.7), (0.01, 0.02, 0.1)))
    assert st2.s == st.s
    with pytest.raises(StreamOrderError):
        predict(st2, ImuSample(0.005, G_UP, (0, 0, 0)))


def test_analytic_jacobian_matches_numeric():
    rng = np.random.default_rng(5)
    st = _state()
    st.x[:] = rng.normal(0, 0.3, 10)
    st.x[9] = 1.0
    imu = ImuSample(0.05, tuple(rng.normal(0, 2, 3) + [0, 0, 9.8]), tuple(rng.normal(0, 0.3, 3)))
    st.P = np.eye(10)
    base = predict(st, imu, NoiseConfig(accel_psd=1e-12, gyro_psd=1e-12))
    num = np.zeros((10, 10))
    for j in range(10):
        sp = st.copy()
        sp.x[j] += 1e-6
        num[:, j] = (predict(sp, imu).x - base.x) / 1e-6
    # F F^T equals the propagated identity covariance
    np.testing.assert_allclose(num @ num.T, base.P, atol=1e-5)


# ------------------------------------------------------------------ updates


def test_velocity_constraint_aligned_is_noop():
    st = _state(gamma=0.4, v=(10 * math.sin(0.4), 10 * math.cos(0.4), 0))
    out = update_velocity_constraint(st)
    np.testing.assert_allclose(out.x, st.x, atol=1e-12)


def test_velocity_constraint_contracts_lateral():
    st = _state(gamma=0.0, v=(2.0, 0, 0))  # facing north, moving east
    out = update_velocity_constraint(st)
    assert abs(body_velocity(out)[1]) < abs(body_velocity(st)[1])


def test_velocity_constraint_keeps_psd_random():
    rng = np.random.default_rng(1)
    for _ in range(200):
        st = _state()
        st.x[:9] = rng.normal(0, 1, 9)
        a = rng.normal(0, 1, (10, 10))
        st.P = a @ a.T * rng.uniform(1e-4, 1)
        assert is_psd(update_velocity_constraint(st).P)


def test_compass_examples():
    st = _state(gamma=0.2)
    same = update_compass(st, CompassSample(0.0, 0.2))
    np.testing.assert_allclose(same.x, st.x, atol=1e-15)
    flipped = update_compass(st, CompassSample(0.0, 0.2 + math.pi))
    np.testing.assert_array_equal(flipped.x, st.x)
    assert flipped.compass_rejected == 1
    st = _state(gamma=math.radians(179))
    out = update_compass(st, CompassSample(0.0, math.radians(-179)))
    # moved towards +180 via the short way
    assert angle_diff(out.theta[2], math.radians(179)) > 0
    assert out.compass_rejected == 0


def test_wheel_examples():
    st = _state(gamma=0.0, v=(0, 10, 0))
    assert wheel_residual(st, WheelSample(0, 10)) == 0
    np.testing.assert_allclose(update_wheel(st, WheelSample(0, 10)).x, st.x, atol=1e-12)
    st = _state(gamma=0.0, v=(0, 10, 0), s=1.1)
    assert wheel_residual(st, WheelSample(0, 10)) == pytest.approx(-1.0)
    out = update_wheel(st, WheelSample(0, 10))
    assert 10 < np.linalg.norm(out.v) < 11
    still = _state()
    assert update_wheel(still, WheelSample(0, 0)) is still
    with pytest.raises(InvalidInputError):
        WheelSample(0, -1)


def test_ssf_blend_and_convergence():
    st = _state()
    out = update_ssf(st, SsfMeasurement(1.10, 1e-4))
    assert 1.0 < out.s < 1.10
    weak = update_ssf(st, SsfMeasurement(1.10, 1e12))
    assert weak.s == pytest.approx(1.0, abs=1e-12)
    for _ in range(10):
        st = update_ssf(st, SsfMeasurement(1.10, 1e-4))
    assert abs(st.s - 1.10) < 0.005


def test_reset_from_alignment():
    rng = np.random.default_rng(2)
    st = _state(gamma=0.1, v=(1, 2, 0))
    st.P = np.eye(10) * 4.0
    same = reset_from_alignment(st, (LocalPoint(0, 0), 0.1), np.eye(3) * 0.5)
    np.testing.assert_array_equal(same.x, st.x)
    assert same.P[0, 0] == 0.5
    jump = reset_from_alignment(st, (LocalPoint(30, 0), 0.1), np.eye(3))
    assert jump.p[0] == 30 and jump.p[1] == 0
    np.testing.assert_array_equal(jump.v, st.v)
    assert jump.P[0, 3] == 0
    for _ in range(100):
        a = rng.normal(0, 1, (10, 10))
        st.P = a @ a.T
        c = rng.normal(0, 1, (3, 3))
        out = reset_from_alignment(st, (LocalPoint(*rng.normal(0, 50, 2)), 0.0), c @ c.T)
        assert is_psd(out.P)
    with pytest.raises(InvalidInputError):
        reset_from_alignment(st, (LocalPoint(0, 0), 0.0), -np.eye(3))


def test_sensor_csv_round_trip():
    imu = [ImuSample(0.01 * k, (0.1, 0.2, 9.8), (0.0, 0.0, 0.01)) for k in range(5)]
    comp = [CompassSample(0.02, 0.5)]
    wheel = [WheelSample(0.03, 4.0)]
    text = write_sensor_csv(imu, comp, wheel)
    assert text.splitlines()[0] == "t,kind,a0,a1,a2,g0,g1,g2"
    assert read_sensor_csv(text) == (imu, comp, wheel)
    with pytest.raises(InvalidInputError):
        read_sensor_csv("t,kind\n0,imu,1\n")

import math

import numpy as np
import pytest

from gbpl.errors import DegenerateGeometryError, InvalidInputError, NoIntersectionError
from gbpl.geo import LocalPoint
from gbpl.lav import (
    CALIBRATED,
    NOMINAL,
    Line2,
    SsfAccumulator,
    Sspte,
    Ssptm,
    Transform2,
    align,
    alignment_dof,
    chi2_threshold,
    estimate_ssf,
    fit_line,
    point_to_line,
    ssf_variance,
    virtual_point,
    virtual_point_cov,
)


def _rot(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s], [s, c]])


# ------------------------------------------------------------------ lines


def test_fit_line_collinear():
    pts = [(0, 1), (1, 3), (2, 5), (3, 7)]
    line = fit_line(pts)
    for p in pts:
        assert point_to_line(LocalPoint(*p), line) < 1e-9
    assert np.allclose(line.a, [0, 1]) and np.allclose(line.b, [3, 7])


def test_fit_line_thin_rectangle():
    line = fit_line([(0, 0), (0, 2), (100, 0), (100, 2)])
    assert abs(line.unit[1]) < 1e-12
    assert point_to_line(LocalPoint(50, 1), line) < 1e-9


def test_fit_line_degenerate():
    with pytest.raises(DegenerateGeometryError):
        fit_line([(1, 1), (1, 1), (1, 1)])
    with pytest.raises(DegenerateGeometryError):
        Line2(np.zeros(2), np.zeros(2))


def test_fit_line_cov_psd_and_matches_monte_carlo():
    rng = np.random.default_rng(0)
    for _ in range(20):
        pts = np.c_[np.linspace(0, 100, 8), rng.normal(0, 1, 8)] @ _rot(rng.uniform(-3, 3)).T
        cov = fit_line(pts, 4.0).cov
        assert np.linalg.eigvalsh(cov).min() > -1e-9
    # propagated covariance of the first reference point versus sampling
    base = np.c_[np.linspace(0, 100, 11), np.zeros(11)]
    line = fit_line(base, 1.0)
    samples = np.array([fit_line(base + rng.normal(0, 1, base.shape)).a for _ in range(4000)])
    emp = np.cov(samples.T)
    assert np.allclose(emp, line.cov[:2, :2], rtol=0.15, atol=0.02)


def test_virtual_point_examples():
    lq = Line2(np.array([0.0, 0.0]), np.array([1.0, 0.0]))
    la = Line2(np.array([5.0, -1.0]), np.array([5.0, 1.0]))
    p = virtual_point(lq, la)
    assert (p.x, p.y) == pytest.approx((5.0, 0.0))
    with pytest.raises(NoIntersectionError):
        virtual_point(lq, Line2(np.array([0.0, 3.0]), np.array([1.0, 3.0])))
    d1 = Line2(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    d2 = Line2(np.array([4.0, 0.0]), np.array([3.0, 1.0]))
    p = virtual_point(d1, d2)
    assert abs(p.x - 2) < 1e-9 and abs(p.y - 2) < 1e-9


def test_virtual_point_cov_psd():
    lq = fit_line([(0, 0), (50, 0), (100, 0)], 1.0)
    la = fit_line([(120, -50), (120, 0), (120, 50)], 1.0)
    cov = virtual_point_cov(lq, la)
    assert np.linalg.eigvalsh(cov).min() > -1e-9 and np.trace(cov) > 0


def test_point_to_line_examples():
    line = Line2(np.array([0.0, 0.0]), np.array([1.0, 0.0]))
    assert point_to_line(LocalPoint(7.0, 0.0), line) == 0.0
    assert point_to_line(LocalPoint(0.0, 5.0), line) == 5.0


def test_point_to_line_rotation_invariant():
    rng = np.random.default_rng(1)
    for _ in range(100):
        a, b, p = rng.normal(0, 50, (3, 2))
        R = _rot(rng.uniform(-math.pi, math.pi))
        d0 = point_to_line(LocalPoint(*p), Line2(a, b))
        d1 = point_to_line(LocalPoint(*(R @ p)), Line2(R @ a, R @ b))
        assert d1 == pytest.approx(d0, rel=1e-9, abs=1e-9)


def test_transform_compose_inverse():
    T = Transform2(0.3, np.array([1.0, -2.0]))
    I = T.compose(T.inverse())
    assert abs(I.angle) < 1e-12 and np.allclose(I.t, 0)


# ------------------------------------------------------------------ align


def _problem(n=21, length=100.0, noise=0.0, rng=None, sigma=1.0, sigma_g=5.0):
    xs = np.linspace(0, length, n)
    pts = np.c_[xs, np.zeros(n)]
    if noise:
        pts = pts + rng.normal(0, noise, pts.shape)
    sp = Sspte(pts, sigma ** 2, p_s=np.array([0.0, 0.0]), p_e=np.array([length, 0.0]))
    sm = Ssptm(np.c_[np.linspace(0, length, 6), np.zeros(6)], sigma_g)
    return sp, sm


def test_align_identity():
    sp, sm = _problem()
    res = align(sp, sm)
    assert abs(res.transform.angle) < 1e-6 and np.linalg.norm(res.transform.t) < 1e-6
    assert res.accepted and res.cost >= 0


def test_align_recovers_translation():
    sp, sm = _problem()
    moved = Sspte(sp.points + [3, 4], sp.covs, sp.p_s + [3, 4], sp.p_e + [3, 4])
    res = align(moved, sm)
    assert np.allclose(res.transform.t, [-3, -4], atol=0.05)
    assert abs(res.transform.angle) < 1e-3 and res.accepted


def test_align_init_is_composed():
    sp, sm = _problem()
    init = Transform2(0.0, np.array([-2.5, -4.0]))
    moved = Sspte(sp.points + [3, 4], sp.covs, sp.p_s + [3, 4], sp.p_e + [3, 4])
    res = align(moved, sm, init=init)
    assert np.allclose(res.transform.t, [-3, -4], atol=0.05)


def test_align_wrong_street_rejected():
    # the drive went north while the matched map street runs east
    n = 21
    pts = np.c_[np.zeros(n), np.linspace(0, 100, n)]
    sp = Sspte(pts, 1.0, p_s=np.array([0.0, 0.0]), p_e=np.array([0.0, 100.0]))
    _, sm = _problem()
    for mode in (CALIBRATED, NOMINAL):
        res = align(sp, sm, mode=mode)
        assert not res.accepted and res.cost > 3 * res.threshold


def test_chi2_threshold_example():
    assert alignment_dof(5, NOMINAL) == 10
    assert chi2_threshold(10, 0.05) == pytest.approx(18.307, abs=1e-3)
    assert alignment_dof(5, CALIBRATED) == 3
    with pytest.raises(InvalidInputError):
        alignment_dof(5, "other")


def test_align_rigid_invariance():
    rng = np.random.default_rng(3)
    sp, sm = _problem(noise=1.0, rng=rng)
    base = align(sp, sm)
    R, t = _rot(0.7), np.array([250.0, -80.0])
    sp2 = Sspte(sp.points @ R.T + t, sp.covs, sp.p_s @ R.T + t, sp.p_e @ R.T + t)
    sm2 = Ssptm(sm.points @ R.T + t, sm.sigma_g)
    res = align(sp2, sm2)
    assert res.cost == pytest.approx(base.cost, rel=1e-4, abs=1e-6)
    assert res.transform.angle == pytest.approx(base.transform.angle, abs=1e-6)
    assert np.allclose(res.aligned_points, base.aligned_points @ R.T + t, atol=1e-4)


def test_align_pose_covariance_psd():
    rng = np.random.default_rng(4)
    sp, sm = _problem(noise=0.5, rng=rng)
    res = align(sp, sm)
    assert np.linalg.eigvalsh(res.pose_cov).min() > -1e-12
    pos, head = res.pose_at(sp.points[-1], 0.25)
    assert head == pytest.approx(0.25 - res.transform.angle)


def test_align_invalid_inputs():
    sp, sm = _problem()
    with pytest.raises(InvalidInputError):
        align(sp, sm, alpha=1.5)
    with pytest.raises(InvalidInputError):
        align(sp, sm, mode="x")
    with pytest.raises(InvalidInputError):
        Sspte(np.zeros((1, 2)), 1.0)
    with pytest.raises(InvalidInputError):
        Ssptm(np.zeros((2, 2)), 0.0)


def test_ssptm_corners_default_to_end_waypoints():
    sm = Ssptm([(0, 0), (10, 0), (20, 0)], 5.0)
    assert np.allclose(sm.start, [0, 0]) and np.allclose(sm.end, [20, 0])
    sm = Ssptm([(0, 0), (10, 0), (20, 0)], 5.0, start=(-4, 0), end=(25, 0))
    assert np.allclose(sm.start, [-4, 0]) and np.allclose(sm.end, [25, 0])


# ------------------------------------------------------------------ SSF


def test_estimate_ssf_examples():
    est = estimate_ssf([100, 200], [110, 220], [1, 1], 5.0)
    assert est.s_ssf == pytest.approx(300 / 330)
    assert est.L_g == 300 and est.L_q == 330 and est.n_s == 2
    assert ssf_variance(1000, 1000, 2, 10.0, 50.0) == pytest.approx(4.5e-4)
    assert estimate_ssf([120, 80], [120, 80], [2, 2], 5.0).s_ssf == 1.0


def test_estimate_ssf_errors():
    with pytest.raises(InvalidInputError):
        estimate_ssf([100, 200], [110], [1], 5.0)
    with pytest.raises(InvalidInputError):
        estimate_ssf([100], [0], [1], 5.0)


def test_ssf_variance_matches_monte_carlo():
    rng = np.random.default_rng(8)
    d_true = np.array([150.0, 300.0, 220.0])
    s_true, sigma_g, sq = 1.1, 5.0, np.array([4.0, 9.0, 6.0])
    trials = 10_000
    # each map length is the gap between two noisy corners
    d_map = s_true * d_true + rng.normal(0, sigma_g, (trials, 3)) - rng.normal(0, sigma_g, (trials, 3))
    d_q = d_true + rng.normal(0, np.sqrt(sq), (trials, 3))
    s = d_map.sum(1) / d_q.sum(1)
    analytic = ssf_variance(d_true.sum(), s_true * d_true.sum(), 3, sigma_g, sq.sum())
    assert np.var(s) == pytest.approx(analytic, rel=0.2)


def test_ssf_variance_decreasing_in_query_length():
    L = np.linspace(200, 5000, 30)
    v = [ssf_variance(x, 1.1 * x, 3, 5.0, 30.0) for x in L]
    assert np.all(np.diff(v) < 0)


def test_accumulator():
    acc = SsfAccumulator(5.0)
    assert acc.estimate() is None
    acc.add(100, 110, 1)
    est = acc.add(200, 220, 1)
    assert est.s_ssf == pytest.approx(300 / 330) and est.n_s == 2
    acc.clear()
    assert acc.estimate() is None

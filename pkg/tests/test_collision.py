import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from conftest import seeds
from oam.collision import (
    Ellipsoid,
    ObstacleSet,
    ground_clearance,
    min_certificate,
    minkowski_separation,
    minkowski_with_gradient,
    point_barrier,
    rate_barrier,
    rate_barrier_with_gradient,
    sampled_intersection,
)
from oam.geometry import exp_so3, random_rotation
from oam.robot_model import RobotModel, WholeBodyConfig

UNIT = Ellipsoid.sphere(np.zeros(3), 1.0)


def test_point_barrier_on_unit_sphere():
    h, g = point_barrier([2.0, 0.0, 0.0], UNIT)
    assert h == pytest.approx(3.0)
    np.testing.assert_allclose(g, [4.0, 0.0, 0.0])


def test_rate_barrier_closing_speed():
    assert rate_barrier([2.0, 0.0, 0.0], [-1.0, 0.0, 0.0], UNIT, 3.0) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        rate_barrier([2.0, 0.0, 0.0], [0.0, 0.0, 0.0], UNIT, 0.0)


@pytest.mark.parametrize(
    "ra, rb, dist, expected",
    [(1.0, 1.0, 3.0, 1.25), (1.0, 2.0, 3.0, 0.0), (1.0, 1.0, 0.0, -1.0)],
)
def test_minkowski_spheres(ra, rb, dist, expected):
    A = Ellipsoid.sphere([0.0, 0.0, 0.0], ra)
    B = Ellipsoid.sphere([dist, 0.0, 0.0], rb)
    assert minkowski_separation(A, B) == pytest.approx(expected, abs=1e-12)


def test_invalid_shapes_rejected():
    with pytest.raises(ValueError):
        Ellipsoid(np.zeros(3), np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(ValueError):
        Ellipsoid(np.zeros(3), np.array([[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))


def test_inflation_grows_axes():
    e = Ellipsoid.from_axes([0.0, 0.0, 0.0], [1.0, 2.0, 3.0], exp_so3([0.1, 0.2, 0.3]))
    a, _ = e.inflated(0.5).semi_axes()
    np.testing.assert_allclose(a, [1.5, 2.5, 3.5])


def test_min_certificate_and_ground():
    model = RobotModel()
    x = WholeBodyConfig(np.array([0.0, 0.0, 1.0]), np.eye(3), np.zeros(3))
    obs = ObstacleSet((Ellipsoid.sphere([2.0, 0.0, 1.0], 0.2),))
    ells = model.body_ellipsoids(x)
    assert min_certificate(ells, obs) == min(minkowski_separation(e, obs.ellipsoids[0]) for e in ells)
    assert min_certificate(ells, ObstacleSet()) == np.inf
    clearance = ground_clearance(x, model)
    np.testing.assert_allclose(clearance[0], 1.0 - 0.35)


def _random_ellipsoid(rng, center_scale):
    return Ellipsoid.from_axes(rng.normal(size=3) * center_scale, rng.uniform(0.1, 1.0, size=3), random_rotation(rng))


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_positive_certificate_implies_disjoint(seed):
    rng = np.random.default_rng(seed)
    A, B = _random_ellipsoid(rng, 1.5), _random_ellipsoid(rng, 1.5)
    h = minkowski_separation(A, B)
    assume(h > 0.0)
    assert not sampled_intersection(A, B, n=2048)


@settings(max_examples=60)
@given(seeds)
def test_point_barrier_sign_matches_containment(seed):
    rng = np.random.default_rng(seed)
    e = _random_ellipsoid(rng, 0.0)
    p = rng.normal(size=3)
    h, _ = point_barrier(p, e)
    assume(abs(h) > 1e-9)
    assert (h < 0.0) == bool(e.contains(p)[0])


@settings(max_examples=40)
@given(seeds)
def test_rate_barrier_gradients(seed):
    rng = np.random.default_rng(seed)
    e = _random_ellipsoid(rng, 1.0)
    p, v = rng.normal(size=3) * 2, rng.normal(size=3)
    val, gp, gv = rate_barrier_with_gradient(p, v, e, 2.0)
    assert val == pytest.approx(rate_barrier(p, v, e, 2.0))
    h = 1e-6
    for i in range(3):
        d = np.zeros(3)
        d[i] = h
        fd_p = (rate_barrier(p + d, v, e, 2.0) - rate_barrier(p - d, v, e, 2.0)) / (2 * h)
        fd_v = (rate_barrier(p, v + d, e, 2.0) - rate_barrier(p, v - d, e, 2.0)) / (2 * h)
        assert gp[i] == pytest.approx(fd_p, rel=1e-5, abs=1e-6)
        assert gv[i] == pytest.approx(fd_v, rel=1e-5, abs=1e-6)


@settings(max_examples=40)
@given(seeds)
def test_minkowski_gradients(seed):
    rng = np.random.default_rng(seed)
    A, B = _random_ellipsoid(rng, 2.0), _random_ellipsoid(rng, 2.0)
    h0, gc, ga, gb = minkowski_with_gradient(A.center, A.shape, B.center, B.shape)
    assert h0 == pytest.approx(minkowski_separation(A, B))
    eps = 1e-6
    for i in range(3):
        d = np.zeros(3)
        d[i] = eps
        hp = minkowski_with_gradient(A.center + d, A.shape, B.center, B.shape)[0]
        hm = minkowski_with_gradient(A.center - d, A.shape, B.center, B.shape)[0]
        assert gc[i] == pytest.approx((hp - hm) / (2 * eps), rel=1e-4, abs=1e-6)
        Rp, Rm = exp_so3(d), exp_so3(-d)
        hp = minkowski_with_gradient(A.center, Rp @ A.shape @ Rp.T, B.center, B.shape)[0]
        hm = minkowski_with_gradient(A.center, Rm @ A.shape @ Rm.T, B.center, B.shape)[0]
        assert ga[i] == pytest.approx((hp - hm) / (2 * eps), rel=1e-4, abs=1e-6)
        hp = minkowski_with_gradient(A.center, A.shape, B.center, Rp @ B.shape @ Rp.T)[0]
        hm = minkowski_with_gradient(A.center, A.shape, B.center, Rm @ B.shape @ Rm.T)[0]
        assert gb[i] == pytest.approx((hp - hm) / (2 * eps), rel=1e-4, abs=1e-6)


@given(st.floats(0.1, 5.0), st.floats(0.1, 5.0), st.floats(0.0, 20.0))
def test_sphere_certificate_sign_matches_gap(ra, rb, dist):
    h = minkowski_separation(Ellipsoid.sphere(np.zeros(3), ra), Ellipsoid.sphere([dist, 0.0, 0.0], rb))
    # for spheres the certificate is exact: sign of distance minus radii
    gap = dist - (ra + rb)
    assume(abs(gap) > 1e-9)
    assert (h > 0.0) == (gap > 0.0)

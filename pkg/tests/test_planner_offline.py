import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oam.collision import Ellipsoid, ObstacleSet
from oam.errors import PlanInfeasible, StartInCollision
from oam.geometry import exp_so3, geodesic_distance, orthonormality_error, rot_z
from oam.planner_offline import (
    OfflineParams,
    TripleIntegratorMaps,
    dense_barrier_min,
    ee_kinematics_step_rotation,
    ee_kinematics_step_translation,
    min_jerk_quintic,
    plan_ee,
    plan_ee_rotation,
    plan_ee_translation,
)

small = st.floats(-2.0, 2.0)
tri = st.tuples(small, small, small).map(np.array)


@given(tri, tri, tri, tri, st.floats(0.001, 0.5))
def test_constant_jerk_step_is_exact(p, v, a, j, dt):
    x = ee_kinematics_step_translation(np.concatenate([p, v, a]), j, dt)
    np.testing.assert_allclose(x[:3], p + v * dt + a * dt**2 / 2 + j * dt**3 / 6, atol=1e-12)
    np.testing.assert_allclose(x[3:6], v + a * dt + j * dt**2 / 2, atol=1e-12)
    np.testing.assert_allclose(x[6:], a + j * dt, atol=1e-12)


@given(st.floats(-3.0, 3.0), st.floats(-3.0, 3.0), st.floats(-3.0, 3.0), st.floats(0.001, 0.2))
def test_single_axis_rotation_step_is_exact(w, dw, ddw, dt):
    # about a fixed axis the angle obeys the scalar constant-jerk law
    axis = np.array([0.0, 0.6, 0.8])
    R, w1, dw1 = ee_kinematics_step_rotation(np.eye(3), w * axis, dw * axis, ddw * axis, dt)
    angle = w * dt + dw * dt**2 / 2 + ddw * dt**3 / 6
    np.testing.assert_allclose(R, exp_so3(angle * axis), atol=1e-12)
    np.testing.assert_allclose(w1, (w + dw * dt + ddw * dt**2 / 2) * axis, atol=1e-12)
    np.testing.assert_allclose(dw1, (dw + ddw * dt) * axis, atol=1e-12)


def test_long_rotation_integration_stays_orthonormal():
    R = np.eye(3)
    w = np.array([0.3, -0.7, 1.1])
    for _ in range(10_000):
        R, w, _ = ee_kinematics_step_rotation(R, w, np.zeros(3), np.zeros(3), 0.01)
    assert orthonormality_error(R) < 1e-9
    expected = exp_so3(100.0 * np.array([0.3, -0.7, 1.1]))
    assert geodesic_distance(R, expected) < 1e-6  # rounding over 1e4 compositions


def test_nonpositive_dt_rejected():
    with pytest.raises(ValueError):
        ee_kinematics_step_translation(np.zeros(9), np.zeros(3), 0.0)
    with pytest.raises(ValueError):
        ee_kinematics_step_rotation(np.eye(3), np.zeros(3), np.zeros(3), np.zeros(3), -0.1)


def test_condensed_maps_match_stepping(rng):
    N, dt = 20, 0.1
    maps = TripleIntegratorMaps.build(N, dt)
    jerk = rng.normal(size=N)
    x = np.array([0.3, -0.2, 0.1])
    xs = [x]
    for k in range(N):
        s = ee_kinematics_step_translation(np.array([x[0], 0, 0, x[1], 0, 0, x[2], 0, 0]), [jerk[k], 0, 0], dt)
        x = s[[0, 3, 6]]
        xs.append(x)
    xs = np.array(xs)
    x0 = xs[0]
    pos = maps.S_x @ jerk + maps.free_x @ x0
    np.testing.assert_allclose(pos, xs[:, 0], atol=1e-12)
    np.testing.assert_allclose(maps.S_v @ jerk + maps.free_v @ x0, xs[:, 1], atol=1e-12)


def test_unobstructed_plan_follows_quintic():
    params = OfflineParams(T_f=15.0, dt=0.1)
    p0, pg = np.array([0.0, 0.0, 1.0]), np.array([2.0, -1.0, 1.5])
    traj = plan_ee_translation(p0, pg, ObstacleSet(ground_height=None), params)
    ref = min_jerk_quintic(p0, pg, traj.times, 15.0)
    assert np.max(np.linalg.norm(traj.p - ref, axis=1)) < 1e-3
    np.testing.assert_allclose(traj.p[-1], pg, atol=1e-6)
    np.testing.assert_allclose(traj.v[-1], 0.0, atol=1e-5)


def test_plan_avoids_sphere():
    obstacles = ObstacleSet((Ellipsoid.sphere([1.0, 0.0, 1.0], 0.3),), ground_height=0.0)
    params = OfflineParams(T_f=10.0, dt=0.1)
    traj = plan_ee_translation([0.0, 0.05, 1.0], [2.0, 0.0, 1.0], obstacles, params, ee_radius=0.02)
    assert dense_barrier_min(traj, obstacles.inflated(0.02)) > 0.0
    np.testing.assert_allclose(traj.p[-1], [2.0, 0.0, 1.0], atol=1e-5)


def test_start_inside_obstacle_rejected():
    obstacles = ObstacleSet((Ellipsoid.sphere([0.0, 0.0, 1.0], 0.5),))
    with pytest.raises(StartInCollision):
        plan_ee_translation([0.0, 0.0, 1.0], [2.0, 0.0, 1.0], obstacles)
    with pytest.raises(PlanInfeasible):
        plan_ee_translation([2.0, 0.0, 1.0], [0.0, 0.0, 1.0], obstacles)


def test_rotation_plan_reaches_goal_at_rest():
    params = OfflineParams(T_f=5.0, dt=0.1)
    Rg = exp_so3([0.4, -0.3, 1.2])
    R, w, dw, ddw, stats = plan_ee_rotation(np.eye(3), Rg, params)
    assert geodesic_distance(R[-1], Rg) < 1e-4
    np.testing.assert_allclose(w[-1], 0.0, atol=1e-5)
    np.testing.assert_allclose(dw[-1], 0.0, atol=1e-5)
    assert stats["terminal_trace_residual"] < 1e-6
    assert max(orthonormality_error(r) for r in R) < 1e-9


def test_single_axis_rotation_plan_matches_quintic_angle():
    params = OfflineParams(T_f=15.0, dt=0.1)
    R, *_ = plan_ee_rotation(np.eye(3), rot_z(1.0), params)
    angle = np.array([math.atan2(r[1, 0], r[0, 0]) for r in R])
    ref = min_jerk_quintic([0.0], [1.0], params.dt * np.arange(params.N + 1), params.T_f)[:, 0]
    assert np.max(np.abs(angle - ref)) < 1e-3


def test_full_plan_sampling_and_serialisation():
    params = OfflineParams(T_f=2.0, dt=0.1)
    traj = plan_ee([0, 0, 1], [0.5, 0, 1], ObstacleSet(), params, R_start=np.eye(3), R_goal=rot_z(0.3))
    assert traj.has_orientation and traj.N == 20 and traj.T == pytest.approx(2.0)
    p, R = traj.sample(100.0)
    np.testing.assert_allclose(p, traj.p[-1])
    np.testing.assert_allclose(R, traj.R[-1])
    p, _ = traj.sample(0.05)
    np.testing.assert_allclose(p, 0.5 * (traj.p[0] + traj.p[1]))
    ps, Rs = traj.window(0.0, 4, 0.1)
    assert ps.shape == (4, 3) and Rs.shape == (4, 3, 3)
    d = traj.to_dict()
    assert len(d["knots"]) == 21 and "R" in d["knots"][0]
    with pytest.raises(ValueError):
        plan_ee([0, 0, 1], [0.5, 0, 1], params=params, R_goal=np.eye(3))


@settings(max_examples=10, deadline=None)
@given(tri, tri)
def test_free_space_plan_is_rest_to_rest(p0, pg):
    params = OfflineParams(T_f=3.0, dt=0.1)
    traj = plan_ee_translation(p0, pg, ObstacleSet(ground_height=None), params)
    np.testing.assert_allclose(traj.p[0], p0)
    np.testing.assert_allclose(traj.p[-1], pg, atol=1e-5)
    np.testing.assert_allclose(traj.v[[0, -1]], 0.0, atol=1e-5)
    np.testing.assert_allclose(traj.a[[0, -1]], 0.0, atol=1e-5)

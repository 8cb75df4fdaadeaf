import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import seeds
from oam.errors import SingularAllocation
from oam.geometry import log_so3, random_rotation, rot_y
from oam.robot_model import (
    DEFAULT_W,
    AllocationConfig,
    Allocator,
    ManipulatorModel,
    PlantParams,
    RobotModel,
    WholeBodyConfig,
    actuators_from_b,
    allocate,
    allocation_matrix,
    b_from_actuators,
)


def test_allocation_matrix_entries():
    cfg = AllocationConfig()
    A = allocation_matrix(cfg)
    assert A.shape == (6, 12)
    assert A[3, 2] == -cfg.L
    # every rotor contributes its vertical thrust component once
    np.testing.assert_array_equal(A[2], np.tile([1.0, 0.0], 6))


def test_b_pair_to_actuator():
    F, alpha = actuators_from_b([3.0, 4.0] + [0.0] * 10)
    assert F[0] == pytest.approx(5.0)
    assert alpha[0] == pytest.approx(0.9273, abs=1e-4)
    np.testing.assert_allclose(b_from_actuators(F, alpha)[:2], [3.0, 4.0])


def test_hover_allocation_is_vertical():
    m, g = 2.25, 9.81
    F, alpha = allocate([0.0, 0.0, m * g], [0.0, 0.0, 0.0])
    assert F.sum() == pytest.approx(m * g, rel=1e-12)
    np.testing.assert_allclose(alpha, 0.0, atol=1e-12)
    assert F[0] == pytest.approx(F[2]) and F[1] == pytest.approx(F[4])


def test_degenerate_allocation_raises():
    with pytest.raises(SingularAllocation):
        Allocator(AllocationConfig(L=0.0, k_f=0.0))


def test_bad_parameters_rejected():
    with pytest.raises(ValueError):
        PlantParams(m=-1.0)
    with pytest.raises(ValueError):
        PlantParams(J_bar=np.array([[1.0, 0.1, 0.0], [0.1, 1.0, 0.0], [0.0, 0.0, 1.0]]))
    with pytest.raises(ValueError):
        AllocationConfig(W=np.ones(11))


@settings(max_examples=200)
@given(st.tuples(*[st.floats(-50.0, 50.0)] * 6))
def test_allocation_roundtrip(w):
    w = np.array(w)
    alloc = Allocator(AllocationConfig(W=np.diag(DEFAULT_W)))
    F, alpha = alloc(w[:3], w[3:])
    assert np.all(F >= 0.0)
    np.testing.assert_allclose(alloc.wrench(F, alpha), w, atol=1e-10)


def test_fk_home_pose():
    model = RobotModel()
    p, R = model.ee_pose(WholeBodyConfig.identity())
    np.testing.assert_allclose(p, [0.0, 0.0, 0.10 + 0.15 + 0.12 + 0.10])
    np.testing.assert_allclose(R, np.eye(3))


def test_fk_first_joint_quarter_turn():
    model = RobotModel()
    x = WholeBodyConfig(np.array([1.0, 2.0, 3.0]), np.eye(3), np.array([math.pi / 2, 0.0, 0.0]))
    p, R = model.ee_pose(x)
    np.testing.assert_allclose(p, [1.0 + 0.37, 2.0, 3.1], atol=1e-12)
    np.testing.assert_allclose(R, rot_y(math.pi / 2), atol=1e-12)


def test_planar_arm_and_margin():
    man = ManipulatorModel()
    assert man.planar and man.n_joints == 3
    np.testing.assert_allclose(man.joint_margin(np.zeros(3)), man.b_theta)


def test_home_outside_polytope_rejected():
    with pytest.raises(ValueError):
        ManipulatorModel(home=np.array([3.0, 0.0, 0.0]))


def test_body_ellipsoids_follow_links():
    model = RobotModel()
    x = WholeBodyConfig.identity()
    ells = model.body_ellipsoids(x)
    assert len(ells) == 4
    np.testing.assert_allclose(ells[1].center, [0.0, 0.0, 0.10 + 0.075])
    centers, radii = model.body_spheres(x)
    assert centers.shape == (4, 3) and radii.shape == (4,)


def _fd_jacobians(model, theta, h=1e-6):
    Jv = np.zeros((3, 3))
    Jw = np.zeros((3, 3))
    x0 = WholeBodyConfig(np.zeros(3), np.eye(3), theta)
    p0, R0 = model.ee_pose(x0)
    for j in range(3):
        d = np.zeros(3)
        d[j] = h
        pp, Rp = model.ee_pose(WholeBodyConfig(np.zeros(3), np.eye(3), theta + d))
        pm, Rm = model.ee_pose(WholeBodyConfig(np.zeros(3), np.eye(3), theta - d))
        Jv[:, j] = (pp - pm) / (2 * h)
        Jw[:, j] = (log_so3(Rp @ R0.T) - log_so3(Rm @ R0.T)) / (2 * h)
    return Jv, Jw


@settings(max_examples=30)
@given(st.tuples(*[st.floats(-1.5, 1.5)] * 3))
def test_jacobians_match_finite_differences(theta):
    model = RobotModel()
    theta = np.array(theta)
    Jv, Jw = model.relative_jacobians(theta)
    Jv_fd, Jw_fd = _fd_jacobians(model, theta)
    np.testing.assert_allclose(Jv, Jv_fd, atol=1e-6)
    np.testing.assert_allclose(Jw, Jw_fd, atol=1e-6)


@settings(max_examples=30)
@given(seeds, st.tuples(*[st.floats(-1.5, 1.5)] * 3))
def test_fk_is_equivariant_in_base_pose(seed, theta):
    rng = np.random.default_rng(seed)
    model = RobotModel()
    R = random_rotation(rng)
    p = rng.normal(size=3)
    local = model.ee_pose(WholeBodyConfig(np.zeros(3), np.eye(3), np.array(theta)))
    world = model.ee_pose(WholeBodyConfig(p, R, np.array(theta)))
    np.testing.assert_allclose(world[0], p + R @ local[0], atol=1e-12)
    np.testing.assert_allclose(world[1], R @ local[1], atol=1e-12)


def test_fk_batch_matches_single(rng):
    model = RobotModel()
    K = 5
    p = rng.normal(size=(K, 3))
    R = np.array([random_rotation(rng) for _ in range(K)])
    th = rng.uniform(-1, 1, size=(K, 3))
    fk = model.fk_batch(p, R, th)
    for k in range(K):
        single = model.forward_kinematics(WholeBodyConfig(p[k], R[k], th[k]))
        np.testing.assert_allclose(fk.ee_p[k], single.ee_p[0], atol=1e-14)
        np.testing.assert_allclose(fk.body_centers[k], single.body_centers[0], atol=1e-14)

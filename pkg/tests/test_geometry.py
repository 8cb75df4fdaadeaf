import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import seeds, small_angle_vec, vec3
from oam.errors import NonSkewInput
from oam.geometry import (
    attitude_error,
    error_C_matrix,
    exp_so3,
    exp_so3_batch,
    geodesic_distance,
    hat,
    log_so3,
    orthonormality_error,
    pitch_angle,
    project_to_so3,
    quat_from_matrix,
    random_rotation,
    reorthonormalize,
    right_jacobian,
    right_jacobian_batch,
    right_jacobian_inv,
    rot_x,
    rot_y,
    rot_z,
    slerp,
    vee,
)


def test_hat_known_matrix():
    expected = np.array([[0.0, -3.0, 2.0], [3.0, 0.0, -1.0], [-2.0, 1.0, 0.0]])
    np.testing.assert_array_equal(hat([1, 2, 3]), expected)


def test_vee_rejects_non_skew():
    with pytest.raises(NonSkewInput):
        vee(np.eye(3))


def test_exp_quarter_turn_about_z():
    R = exp_so3([0.0, 0.0, math.pi / 2])
    expected = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    np.testing.assert_allclose(R, expected, atol=1e-15)


def test_exp_small_angle_branch_is_rotation():
    R = exp_so3([1e-9, -2e-9, 0.5e-9])
    assert orthonormality_error(R) < 1e-15
    np.testing.assert_allclose(R, np.eye(3) + hat([1e-9, -2e-9, 0.5e-9]), atol=1e-17)


def test_log_near_pi_recovers_axis():
    axis = np.array([1.0, 2.0, -2.0]) / 3.0
    for ang in (math.pi, math.pi - 1e-6, math.pi - 1e-3):
        v = log_so3(exp_so3(ang * axis))
        np.testing.assert_allclose(exp_so3(v), exp_so3(ang * axis), atol=1e-9)
        assert abs(np.linalg.norm(v) - ang) < 1e-6


@pytest.mark.parametrize("theta", [0.0, 0.3, 1.0, 2.5, math.pi])
def test_psi_for_z_rotation(theta):
    _, psi = attitude_error(np.eye(3), rot_z(theta))
    assert psi == pytest.approx(1.0 - math.cos(theta), abs=1e-14)


def test_geodesic_distance_clamps_trace_overflow():
    # trace 3 + 1e-12 would give acos of slightly more than 1
    R = np.eye(3) * (1.0 + 1e-12 / 3.0)
    d = geodesic_distance(R, np.eye(3))
    assert d == 0.0 and not math.isnan(d)


def test_attitude_error_small_rotation_matches_angle():
    e_R, _ = attitude_error(np.eye(3), rot_x(1e-4))
    np.testing.assert_allclose(e_R, [1e-4, 0.0, 0.0], rtol=1e-7)


def test_reorthonormalize_only_when_drifted():
    R = rot_z(0.3)
    assert reorthonormalize(R) is R
    drifted = R + 1e-6
    fixed = reorthonormalize(drifted)
    assert orthonormality_error(fixed) < 1e-14


def test_pitch_angle_passes_through_ninety():
    assert math.degrees(pitch_angle(rot_y(math.radians(120.0)))) == pytest.approx(120.0)
    assert math.degrees(pitch_angle(rot_y(math.radians(-30.0)))) == pytest.approx(-30.0)


def test_quaternion_order_and_sign():
    q = quat_from_matrix(rot_z(math.pi / 2))
    np.testing.assert_allclose(q, [math.cos(math.pi / 4), 0.0, 0.0, math.sin(math.pi / 4)], atol=1e-15)
    q = quat_from_matrix(rot_x(math.pi))
    assert q[0] >= 0.0 and abs(abs(q[1]) - 1.0) < 1e-12


@given(vec3, vec3)
def test_hat_is_cross_product(v, w):
    np.testing.assert_allclose(hat(v) @ w, np.cross(v, w), atol=1e-9)
    np.testing.assert_array_equal(vee(hat(v)), v)


@given(vec3)
def test_exp_is_rotation(v):
    R = exp_so3(v)
    assert orthonormality_error(R) < 1e-12
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


@given(small_angle_vec)
def test_log_inverts_exp(v):
    np.testing.assert_allclose(log_so3(exp_so3(v)), v, atol=1e-9)


@given(st.lists(small_angle_vec, min_size=1, max_size=6))
def test_batch_matches_scalar(vs):
    v = np.array(vs)
    np.testing.assert_allclose(exp_so3_batch(v), np.array([exp_so3(x) for x in v]), atol=1e-14)
    np.testing.assert_allclose(right_jacobian_batch(v), np.array([right_jacobian(x) for x in v]), atol=1e-14)


@given(small_angle_vec)
def test_right_jacobian_inverse(v):
    np.testing.assert_allclose(right_jacobian(v) @ right_jacobian_inv(v), np.eye(3), atol=1e-9)


@given(small_angle_vec, vec3)
def test_right_jacobian_first_order(v, d):
    d = 1e-6 * d / max(np.linalg.norm(d), 1e-12)
    lhs = exp_so3(v + d)
    rhs = exp_so3(v) @ exp_so3(right_jacobian(v) @ d)
    assert np.linalg.norm(lhs - rhs) < 1e-10


@given(seeds)
def test_random_rotation_invariants(seed):
    rng = np.random.default_rng(seed)
    R, Rd = random_rotation(rng), random_rotation(rng)
    e_R, psi = attitude_error(R, Rd)
    assert 0.0 <= psi <= 2.0 + 1e-12
    d = geodesic_distance(R, Rd)
    assert 0.0 <= d <= math.pi
    # Psi = 1 - cos(d)
    assert psi == pytest.approx(1.0 - math.cos(d), abs=1e-9)
    assert np.linalg.norm(error_C_matrix(R, Rd), 2) <= 1.0 + 1e-12
    assert np.linalg.norm(e_R) <= 1.0 + 1e-12


@given(seeds)
def test_quaternion_roundtrip(seed):
    R = random_rotation(np.random.default_rng(seed))
    w, x, y, z = quat_from_matrix(R)
    Rq = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )
    np.testing.assert_allclose(Rq, R, atol=1e-12)


@given(seeds, st.floats(0.0, 1.0))
def test_slerp_endpoints_and_geodesic(seed, s):
    rng = np.random.default_rng(seed)
    R0, R1 = random_rotation(rng), random_rotation(rng)
    np.testing.assert_allclose(slerp(R0, R1, 0.0), R0, atol=1e-12)
    np.testing.assert_allclose(slerp(R0, R1, 1.0), R1, atol=1e-9)
    d = geodesic_distance(R0, R1)
    assert geodesic_distance(R0, slerp(R0, R1, s)) == pytest.approx(s * d, abs=1e-7)


@settings(max_examples=50)
@given(seeds)
def test_projection_is_idempotent_rotation(seed):
    rng = np.random.default_rng(seed)
    M = random_rotation(rng) + 1e-3 * rng.normal(size=(3, 3))
    R = project_to_so3(M)
    assert orthonormality_error(R) < 1e-12
    np.testing.assert_allclose(project_to_so3(R), R, atol=1e-12)


@settings(max_examples=200)
@given(seeds, st.floats(-9.0, -1.0))
def test_log_roundtrip_near_pi(seed, log_gap):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=3)
    a /= np.linalg.norm(a)
    R = exp_so3((np.pi - 10.0**log_gap) * a)
    np.testing.assert_allclose(exp_so3(log_so3(R)), R, atol=1e-10)

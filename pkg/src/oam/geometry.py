"""SO(3) primitives: hat/vee, exponential and logarithm, attitude errors.

Rotations are plain ``(3, 3)`` float arrays; vectors are ``(3,)`` arrays.
Batched variants accept a leading stack dimension.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.typing import ArrayLike, NDArray

from oam.errors import NonSkewInput

SMALL_ANGLE = 1e-8
SKEW_TOL = 1e-9
ORTHO_TOL = 1e-9

Array = NDArray[np.float64]


def hat(v: ArrayLike) -> Array:
    """Skew matrix with ``hat(v) @ w == cross(v, w)``."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def hat_batch(v: ArrayLike) -> Array:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee(S: ArrayLike, check: bool = True) -> Array:
    """Inverse of :func:`hat`.

    Raises :class:`NonSkewInput` when ``||S + S^T||_F`` exceeds 1e-9.
    """
    S = np.asarray(S, dtype=float)
    if check and np.linalg.norm(S + S.T) > SKEW_TOL:
        raise NonSkewInput(f"matrix is not skew-symmetric (||S+S^T||={np.linalg.norm(S + S.T):.3g})")
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def _skew_part_vee(M: Array) -> Array:
    # vee(M - M^T) without the skew check; M need not be skew.
    return np.array([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])


def exp_so3(v: ArrayLike) -> Array:
    """Rodrigues formula; second-order Taylor expansion below 1e-8 rad."""
    v = np.asarray(v, dtype=float)
    theta = math.sqrt(float(v @ v))
    K = hat(v)
    if theta <= SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * K @ K
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * K @ K


def exp_so3_batch(v: ArrayLike) -> Array:
    v = np.asarray(v, dtype=float)
    theta = np.sqrt(np.einsum("...i,...i->...", v, v))
    K = hat_batch(v)
    K2 = K @ K
    small = theta <= SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0, np.sin(safe) / safe)
    b = np.where(small, 0.5, (1.0 - np.cos(safe)) / (safe * safe))
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * K2


def log_so3(R: ArrayLike) -> Array:
    """Rotation vector ``v`` with ``exp_so3(v) == R`` and ``|v| <= pi``."""
    R = np.asarray(R, dtype=float)
    c = float(np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0))
    w = _skew_part_vee(R)
    # atan2 keeps theta accurate near pi where acos of the trace is ill-conditioned.
    theta = math.atan2(0.5 * float(np.linalg.norm(w)), c)
    if theta <= 1e-6:
        # R ~ I + hat(v) + hat(v)^2/2; the skew part gives v to third order.
        return 0.5 * w
    if math.pi - theta > 1e-4:
        return theta / (2.0 * math.sin(theta)) * w
    # Near pi the skew part vanishes; recover the axis from the symmetric part.
    B = 0.5 * (R + R.T) - c * np.eye(3)
    B /= 1.0 - c
    i = int(np.argmax(np.diag(B)))
    axis = B[:, i] / math.sqrt(max(B[i, i], 1e-300))
    if axis @ w < 0.0:
        axis = -axis
    return theta * axis / np.linalg.norm(axis)


def right_jacobian(v: ArrayLike) -> Array:
    """``exp(v + d) ~= exp(v) exp(Jr(v) d)`` for small ``d``."""
    v = np.asarray(v, dtype=float)
    theta2 = float(v @ v)
    K = hat(v)
    if theta2 < 1e-10:
        return np.eye(3) - 0.5 * K + K @ K / 6.0
    theta = math.sqrt(theta2)
    return (
        np.eye(3)
        - (1.0 - math.cos(theta)) / theta2 * K
        + (theta - math.sin(theta)) / (theta2 * theta) * K @ K
    )


def right_jacobian_batch(v: ArrayLike) -> Array:
    v = np.asarray(v, dtype=float)
    theta2 = np.einsum("...i,...i->...", v, v)
    K = hat_batch(v)
    K2 = K @ K
    small = theta2 < 1e-10
    t2 = np.where(small, 1.0, theta2)
    t = np.sqrt(t2)
    a = np.where(small, 0.5, (1.0 - np.cos(t)) / t2)
    b = np.where(small, 1.0 / 6.0, (t - np.sin(t)) / (t2 * t))
    return np.eye(3) - a[..., None, None] * K + b[..., None, None] * K2


def right_jacobian_inv(v: ArrayLike) -> Array:
    v = np.asarray(v, dtype=float)
    theta2 = float(v @ v)
    K = hat(v)
    if theta2 < 1e-10:
        return np.eye(3) + 0.5 * K + K @ K / 12.0
    theta = math.sqrt(theta2)
    coef = 1.0 / theta2 - (1.0 + math.cos(theta)) / (2.0 * theta * math.sin(theta))
    return np.eye(3) + 0.5 * K + coef * K @ K


def attitude_error(R: ArrayLike, R_d: ArrayLike) -> tuple[Array, float]:
    """Return ``(e_R, Psi)`` with ``e_R = vee(Q - Q^T)/2`` and ``Psi = tr(I - Q)/2``, ``Q = R^T R_d``."""
    Q = np.asarray(R, dtype=float).T @ np.asarray(R_d, dtype=float)
    e_R = 0.5 * _skew_part_vee(Q)
    psi = 0.5 * (3.0 - float(np.trace(Q)))
    return e_R, psi


def geodesic_distance(R: ArrayLike, R_d: ArrayLike) -> float:
    """Angle of ``R^T R_d`` in radians, in ``[0, pi]``."""
    tr = float(np.trace(np.asarray(R, dtype=float).T @ np.asarray(R_d, dtype=float)))
    return math.acos(min(1.0, max(-1.0, (tr - 1.0) / 2.0)))


def error_C_matrix(R: ArrayLike, R_d: ArrayLike) -> Array:
    """Matrix ``C`` with ``d/dt e_R = C e_omega``."""
    Q = np.asarray(R, dtype=float).T @ np.asarray(R_d, dtype=float)
    return 0.5 * (np.trace(Q) * np.eye(3) - Q)


def orthonormality_error(R: ArrayLike) -> float:
    R = np.asarray(R, dtype=float)
    return float(np.linalg.norm(R.T @ R - np.eye(3)))


def project_to_so3(R: ArrayLike) -> Array:
    """Closest rotation in Frobenius norm (polar factor via SVD)."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def reorthonormalize(R: Array, tol: float = ORTHO_TOL) -> Array:
    """Project ``R`` back to SO(3) only when its drift exceeds ``tol``."""
    if orthonormality_error(R) > tol:
        return project_to_so3(R)
    return R


def is_rotation(R: ArrayLike, tol: float = ORTHO_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    return R.shape == (3, 3) and orthonormality_error(R) <= tol and abs(np.linalg.det(R) - 1.0) <= tol


def rot_x(a: float) -> Array:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> Array:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> Array:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def slerp(R0: ArrayLike, R1: ArrayLike, s: float) -> Array:
    """Geodesic interpolation ``R0 exp(s log(R0^T R1))``."""
    R0 = np.asarray(R0, dtype=float)
    return R0 @ exp_so3(s * log_so3(R0.T @ np.asarray(R1, dtype=float)))


def pitch_angle(R: ArrayLike) -> float:
    """Tilt of the body z-axis in the world x-z plane, in ``(-pi, pi]``.

    Unlike a ZYX Euler pitch this passes smoothly through +-90 deg, so a
    base flipped upside down about y reads as +-180 deg.
    """
    R = np.asarray(R, dtype=float)
    return math.atan2(R[0, 2], R[2, 2])


def quat_from_matrix(R: ArrayLike) -> Array:
    """Unit quaternion ``[q_w, q_x, q_y, q_z]`` with ``q_w >= 0``."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0.0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    return -q if q[0] < 0.0 else q


def random_rotation(rng: np.random.Generator) -> Array:
    """Haar-uniform rotation from a normalised Gaussian quaternion."""
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )

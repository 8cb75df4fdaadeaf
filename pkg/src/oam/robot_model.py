"""Static description of the aerial manipulator.

Inertial parameters, tilt-rotor allocation, the 3-joint pitch-plane arm
(plus a binary gripper that never enters the kinematics), and the
ellipsoid/sphere decomposition of every rigid body used for collision
checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
from numpy.typing import ArrayLike, NDArray

from oam.collision import Ellipsoid
from oam.errors import SingularAllocation
from oam.geometry import exp_so3, exp_so3_batch, is_rotation

Array = NDArray[np.float64]

GRAVITY = 9.81
DEFAULT_W = (1.0, 1.0, 0.6, 0.6, 1.0, 1.0, 1.0, 1.0, 0.6, 0.6, 1.0, 1.0)
ALLOCATION_COND_LIMIT = 1e12


# --------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class PlantParams:
    """True and nominal inertial parameters.

    ``m``/``J_b`` drive the simulated plant; the controller only ever sees
    ``m_bar``/``J_bar``.
    """

    m: float = 2.25
    J_b: Array = field(
        default_factory=lambda: np.array([[0.022, 0.0005, 0.0], [0.0005, 0.028, 0.0003], [0.0, 0.0003, 0.038]])
    )
    m_bar: float = 2.13
    J_bar: Array = field(default_factory=lambda: np.diag([0.02, 0.025, 0.035]))
    g: float = GRAVITY

    def __post_init__(self):
        J = np.asarray(self.J_b, dtype=float)
        Jn = np.asarray(self.J_bar, dtype=float)
        object.__setattr__(self, "J_b", J)
        object.__setattr__(self, "J_bar", Jn)
        if self.m <= 0 or self.m_bar <= 0:
            raise ValueError("masses must be positive")
        for name, M in (("J_b", J), ("J_bar", Jn)):
            if not np.allclose(M, M.T) or np.linalg.eigvalsh(M)[0] <= 0:
                raise ValueError(f"{name} must be symmetric positive definite")
        if not np.allclose(Jn, np.diag(np.diag(Jn))):
            raise ValueError("J_bar must be diagonal")

    def with_mass(self, m: float) -> "PlantParams":
        return PlantParams(m=m, J_b=self.J_b, m_bar=self.m_bar, J_bar=self.J_bar, g=self.g)


@dataclass(frozen=True)
class AllocationConfig:
    L: float = 0.018
    k_f: float = 0.015
    W: Array = field(default_factory=lambda: np.diag(DEFAULT_W))

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        if W.ndim == 1:
            W = np.diag(W)
        object.__setattr__(self, "W", W)
        if W.shape != (12, 12) or not np.allclose(W, np.diag(np.diag(W))) or np.any(np.diag(W) <= 0):
            raise ValueError("W must be a 12x12 diagonal matrix with positive entries")
        if self.L < 0 or self.k_f < 0:
            raise ValueError("L and k_f must be non-negative")


def allocation_matrix(cfg: AllocationConfig) -> Array:
    """The constant 6x12 map from ``b`` (``F_i cos a_i, F_i sin a_i`` pairs) to ``[f; tau]``."""
    L, kf = cfg.L, cfg.k_f
    c, s = math.cos(math.pi / 3), math.sin(math.pi / 3)
    A1 = np.array(
        [
            [0, -c, 0, -1, 0, -c],
            [0, s, 0, 0, 0, -s],
            [1, 0, 1, 0, 1, 0],
            [-L * c, kf * c, -L, -kf, -L * c, kf * c],
            [L * s, -kf * s, 0, 0, -L * s, kf * s],
            [-kf, -L, kf, -L, -kf, -L],
        ],
        dtype=float,
    )
    A2 = np.array(
        [
            [0, c, 0, 1, 0, c],
            [0, -s, 0, 0, 0, s],
            [1, 0, 1, 0, 1, 0],
            [L * c, kf * c, L, -kf, L * c, kf * c],
            [-L * s, -kf * s, 0, 0, L * s, kf * s],
            [kf, -L, -kf, -L, kf, -L],
        ],
        dtype=float,
    )
    return np.hstack([A1, A2])


def actuators_from_b(b: ArrayLike) -> tuple[Array, Array]:
    """Rotor thrusts and servo angles from the stacked ``b`` vector."""
    b = np.asarray(b, dtype=float).reshape(6, 2)
    return np.hypot(b[:, 0], b[:, 1]), np.arctan2(b[:, 1], b[:, 0])


def b_from_actuators(F: ArrayLike, alpha: ArrayLike) -> Array:
    F = np.asarray(F, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    return np.column_stack([F * np.cos(alpha), F * np.sin(alpha)]).reshape(12)


class Allocator:
    """Weighted pseudo-inverse allocation with the inverse precomputed."""

    def __init__(self, cfg: AllocationConfig | None = None):
        self.cfg = cfg or AllocationConfig()
        self.A = allocation_matrix(self.cfg)
        AWA = self.A @ self.cfg.W @ self.A.T
        cond = np.linalg.cond(AWA)
        if not np.isfinite(cond) or cond >= ALLOCATION_COND_LIMIT:
            raise SingularAllocation(f"cond(A W A^T) = {cond:.3g}")
        self.pinv = self.cfg.W @ self.A.T @ np.linalg.inv(AWA)

    def solve_b(self, wrench: ArrayLike) -> Array:
        return self.pinv @ np.asarray(wrench, dtype=float)

    def __call__(self, f: ArrayLike, tau: ArrayLike) -> tuple[Array, Array]:
        return actuators_from_b(self.solve_b(np.concatenate([f, tau])))

    def wrench(self, F: ArrayLike, alpha: ArrayLike) -> Array:
        return self.A @ b_from_actuators(F, alpha)


def allocate(f: ArrayLike, tau: ArrayLike, cfg: AllocationConfig | None = None) -> tuple[Array, Array]:
    """Body force/torque to rotor thrusts ``F`` (N) and servo angles ``alpha`` (rad)."""
    return Allocator(cfg)(f, tau)


# --------------------------------------------------------------------------
# configuration of the whole body


@dataclass(frozen=True)
class WholeBodyConfig:
    """Base position and attitude plus the three motion-joint angles."""

    p: Array
    R: Array
    theta: Array

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(3))
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float).reshape(3, 3))
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float).reshape(-1))

    @classmethod
    def identity(cls, n_joints: int = 3) -> "WholeBodyConfig":
        return cls(np.zeros(3), np.eye(3), np.zeros(n_joints))


def _deg(x):
    return np.deg2rad(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class ManipulatorModel:
    """Serial arm on the base: three motion joints and a gripper.

    At zero joint angles every link points along the mount frame's +z.
    ``A_theta theta <= b_theta`` is the self-collision polytope.
    """

    link_lengths: Array = field(default_factory=lambda: np.array([0.15, 0.12, 0.10]))
    joint_axes: Array = field(default_factory=lambda: np.tile([0.0, 1.0, 0.0], (3, 1)))
    mount_p: Array = field(default_factory=lambda: np.array([0.0, 0.0, 0.10]))
    mount_R: Array = field(default_factory=lambda: np.eye(3))
    A_theta: Array = field(default_factory=lambda: np.vstack([np.eye(3), -np.eye(3)]))
    b_theta: Array = field(default_factory=lambda: np.concatenate([_deg([100, 120, 120])] * 2))
    home: Array = field(default_factory=lambda: np.zeros(3))
    has_gripper: bool = True

    def __post_init__(self):
        for name in ("link_lengths", "joint_axes", "mount_p", "mount_R", "A_theta", "b_theta", "home"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.link_lengths <= 0):
            raise ValueError("link lengths must be positive")
        if not np.allclose(np.linalg.norm(self.joint_axes, axis=1), 1.0):
            raise ValueError("joint axes must be unit vectors")
        if not is_rotation(self.mount_R):
            raise ValueError("mount_R must be a rotation")
        if np.any(self.A_theta @ self.home > self.b_theta):
            raise ValueError("home configuration violates the joint polytope")

    @property
    def n_joints(self) -> int:
        return len(self.link_lengths)

    @property
    def planar(self) -> bool:
        """True when every motion joint rotates about the same axis."""
        a0 = self.joint_axes[0]
        return bool(np.all(np.abs(self.joint_axes @ a0) > 1.0 - 1e-12))

    def joint_margin(self, theta: ArrayLike) -> Array:
        return self.b_theta - self.A_theta @ np.asarray(theta, dtype=float)


@dataclass(frozen=True)
class BodyEllipsoidSet:
    """Local ellipsoid shapes for the base (index 0) and each link.

    ``local_centers`` are offsets in each body's frame (links: from the
    joint along the link); ``radii`` are the bounding-sphere radii used
    against the ground.
    """

    shapes: tuple[Array, ...]
    local_centers: tuple[Array, ...]
    radii: Array

    def __post_init__(self):
        shapes = tuple(np.asarray(Q, dtype=float) for Q in self.shapes)
        for Q in shapes:
            if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q)[0] <= 0:
                raise ValueError("body shape matrices must be SPD")
        object.__setattr__(self, "shapes", shapes)
        object.__setattr__(self, "local_centers", tuple(np.asarray(c, dtype=float) for c in self.local_centers))
        radii = np.asarray(self.radii, dtype=float)
        if np.any(radii <= 0):
            raise ValueError("sphere radii must be positive")
        object.__setattr__(self, "radii", radii)

    @classmethod
    def default(
        cls,
        manip: ManipulatorModel,
        base_axes: ArrayLike = (0.35, 0.35, 0.10),
        link_radius: float = 0.025,
    ) -> "BodyEllipsoidSet":
        base_axes = np.asarray(base_axes, dtype=float)
        shapes = [np.diag(base_axes**2)]
        centers = [np.zeros(3)]
        radii = [float(base_axes.max())]
        for length in manip.link_lengths:
            # prolate ellipsoid around a capsule of the given radius
            axes = np.array([1.5 * link_radius, 1.5 * link_radius, 0.5 * length + link_radius])
            shapes.append(np.diag(axes**2))
            centers.append(np.array([0.0, 0.0, 0.5 * length]))
            radii.append(float(axes.max()))
        return cls(tuple(shapes), tuple(centers), np.array(radii))

    def inflated(self, margin: float) -> "BodyEllipsoidSet":
        shapes = []
        for Q in self.shapes:
            w, V = np.linalg.eigh(Q)
            a = np.sqrt(w) + margin
            shapes.append(V @ np.diag(a * a) @ V.T)
        return BodyEllipsoidSet(tuple(shapes), self.local_centers, self.radii + margin)

    @property
    def n_bodies(self) -> int:
        return len(self.shapes)


@dataclass
class FkResult:
    """Forward kinematics of one or many configurations (leading axis ``K``).

    ``body_R``/``body_centers`` index 0 is the base. ``joint_pos``/``joint_axis``
    are world-frame and ordered by joint.
    """

    body_R: Array  # (K, B, 3, 3)
    body_centers: Array  # (K, B, 3)
    joint_pos: Array  # (K, n, 3)
    joint_axis: Array  # (K, n, 3)
    ee_p: Array  # (K, 3)
    ee_R: Array  # (K, 3, 3)


class RobotModel:
    """Everything static about the vehicle, bundled."""

    def __init__(
        self,
        plant: PlantParams | None = None,
        allocation: AllocationConfig | None = None,
        manipulator: ManipulatorModel | None = None,
        bodies: BodyEllipsoidSet | None = None,
        ee_radius: float = 0.02,
    ):
        self.plant = plant or PlantParams()
        self.allocation = allocation or AllocationConfig()
        self.manipulator = manipulator or ManipulatorModel()
        self.bodies = bodies or BodyEllipsoidSet.default(self.manipulator)
        if self.bodies.n_bodies != self.manipulator.n_joints + 1:
            raise ValueError("need one body ellipsoid for the base and one per link")
        self.ee_radius = float(ee_radius)

    # ---- kinematics

    def fk_batch(self, p: ArrayLike, R: ArrayLike, theta: ArrayLike) -> FkResult:
        """Vectorised forward kinematics over a stack of configurations."""
        man = self.manipulator
        p = np.asarray(p, dtype=float).reshape(-1, 3)
        R = np.asarray(R, dtype=float).reshape(-1, 3, 3)
        theta = np.asarray(theta, dtype=float).reshape(-1, man.n_joints)
        K, n = p.shape[0], man.n_joints
        body_R = np.empty((K, n + 1, 3, 3))
        body_c = np.empty((K, n + 1, 3))
        jpos = np.empty((K, n, 3))
        jaxis = np.empty((K, n, 3))
        body_R[:, 0] = R
        body_c[:, 0] = p + R @ self.bodies.local_centers[0]
        Rl = R @ man.mount_R
        start = p + R @ man.mount_p
        for j in range(n):
            a = man.joint_axes[j]
            jpos[:, j] = start
            jaxis[:, j] = Rl @ a
            Rl = Rl @ exp_so3_batch(theta[:, j, None] * a)
            body_R[:, j + 1] = Rl
            body_c[:, j + 1] = start + Rl @ self.bodies.local_centers[j + 1]
            start = start + Rl[:, :, 2] * man.link_lengths[j]
        return FkResult(body_R, body_c, jpos, jaxis, start, Rl)

    def forward_kinematics(self, x: WholeBodyConfig) -> FkResult:
        return self.fk_batch(x.p, x.R, x.theta)

    def ee_pose(self, x: WholeBodyConfig) -> tuple[Array, Array]:
        fk = self.forward_kinematics(x)
        return fk.ee_p[0], fk.ee_R[0]

    def relative_jacobians(self, theta: ArrayLike) -> tuple[Array, Array]:
        """Base-frame Jacobians of the end-effector position and orientation w.r.t. ``theta``."""
        fk = self.fk_batch(np.zeros(3), np.eye(3), theta)
        r = fk.ee_p[0] - fk.joint_pos[0]
        J_v = np.cross(fk.joint_axis[0], r).T
        J_w = fk.joint_axis[0].T.copy()
        return J_v, J_w

    def manipulability_jacobians(self, theta: ArrayLike) -> tuple[Array, Array | None]:
        """Jacobians used by the manipulability index.

        For a planar arm the position Jacobian is projected onto the plane of
        motion and the (constant) orientation term is dropped.
        """
        J_v, J_w = self.relative_jacobians(theta)
        man = self.manipulator
        if man.planar:
            P = self.motion_plane_basis()
            return P @ J_v, None
        return J_v, J_w

    def motion_plane_basis(self) -> Array:
        """2x3 orthonormal basis of the plane normal to the common joint axis (base frame)."""
        man = self.manipulator
        n = man.mount_R @ man.joint_axes[0]
        helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
        e1 = helper - (helper @ n) * n
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(n, e1)
        return np.vstack([e1, e2])

    # ---- collision geometry

    def body_ellipsoids(self, x: WholeBodyConfig, bodies: BodyEllipsoidSet | None = None) -> list[Ellipsoid]:
        bodies = bodies or self.bodies
        fk = self.forward_kinematics(x)
        out = []
        for i, Q0 in enumerate(bodies.shapes):
            Ri = fk.body_R[0, i]
            out.append(Ellipsoid(fk.body_centers[0, i], Ri @ Q0 @ Ri.T))
        return out

    def body_spheres(self, x: WholeBodyConfig) -> tuple[Array, Array]:
        fk = self.forward_kinematics(x)
        return fk.body_centers[0], self.bodies.radii

    # ---- serialisation

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RobotModel":
        plant_d = dict(d.get("plant", {}))
        plant_kw = {}
        if "m" in plant_d:
            plant_kw["m"] = float(plant_d["m"])
        if "J_b" in plant_d:
            J = np.asarray(plant_d["J_b"], dtype=float)
            plant_kw["J_b"] = np.diag(J) if J.ndim == 1 else J
        if "m_bar" in plant_d:
            plant_kw["m_bar"] = float(plant_d["m_bar"])
        if "J_bar_diag" in plant_d:
            plant_kw["J_bar"] = np.diag(plant_d["J_bar_diag"])
        if "g" in plant_d:
            plant_kw["g"] = float(plant_d["g"])
        plant = PlantParams(**plant_kw)

        al = d.get("allocation", {})
        allocation = AllocationConfig(
            L=float(al.get("L", 0.018)),
            k_f=float(al.get("k_f", 0.015)),
            W=np.diag(al.get("W_diag", DEFAULT_W)),
        )

        ar = d.get("arm", {})
        man_kw = {}
        if "link_lengths" in ar:
            man_kw["link_lengths"] = np.asarray(ar["link_lengths"], dtype=float)
        if "joint_axes" in ar:
            man_kw["joint_axes"] = np.asarray(ar["joint_axes"], dtype=float)
        if "mount_p" in ar:
            man_kw["mount_p"] = np.asarray(ar["mount_p"], dtype=float)
        if "joint_limits_deg" in ar:
            lim = _deg(ar["joint_limits_deg"])  # (n, 2) rows of [lo, hi]
            n = lim.shape[0]
            man_kw["A_theta"] = np.vstack([np.eye(n), -np.eye(n)])
            man_kw["b_theta"] = np.concatenate([lim[:, 1], -lim[:, 0]])
        manip = ManipulatorModel(**man_kw)

        bo = d.get("bodies", {})
        bodies = BodyEllipsoidSet.default(
            manip,
            base_axes=bo.get("base_semi_axes", (0.35, 0.35, 0.10)),
            link_radius=float(bo.get("link_radius", 0.025)),
        )
        return cls(plant, allocation, manip, bodies, ee_radius=float(bo.get("ee_radius", 0.02)))


def forward_kinematics(model: RobotModel, x: WholeBodyConfig) -> FkResult:
    return model.forward_kinematics(x)


def body_ellipsoids(model: RobotModel, x: WholeBodyConfig) -> list[Ellipsoid]:
    return model.body_ellipsoids(x)


def joint_rotation(axis: ArrayLike, angle: float) -> Array:
    return exp_so3(np.asarray(axis, dtype=float) * angle)

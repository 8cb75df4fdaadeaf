"""Disturbance sources acting on the floating base.

Every source returns a world-frame force and a body-frame torque. The arm
reaction treats each link (and the gripper, plus any held payload) as a
point mass and ignores coupling through the base rotation rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from oam.robot_model import GRAVITY, RobotModel
from oam.state import RigidBodyState

Array = NDArray[np.float64]

E3 = np.array([0.0, 0.0, 1.0])
ARM_FD_STEP = 1e-3


@dataclass
class ArmReaction:
    """Reaction wrench of the arm's point masses on the base."""

    model: RobotModel
    link_masses: Array = field(default_factory=lambda: np.array([0.03, 0.02, 0.02]))
    gripper_mass: float = 0.02
    payload_mass: float = 0.0
    g: float = GRAVITY

    def __post_init__(self):
        self.link_masses = np.asarray(self.link_masses, dtype=float)

    def points(self, theta_stack: Array) -> tuple[Array, Array]:
        """Base-frame mass positions (K, n+1, 3) and the mass vector."""
        K = theta_stack.shape[0]
        fk = self.model.fk_batch(np.zeros((K, 3)), np.broadcast_to(np.eye(3), (K, 3, 3)), theta_stack)
        pts = np.concatenate([fk.body_centers[:, 1:], fk.ee_p[:, None, :]], axis=1)
        masses = np.concatenate([self.link_masses, [self.gripper_mass + self.payload_mass]])
        return pts, masses

    def __call__(self, R: Array, theta: Array, theta_dot: Array, theta_ddot: Array) -> tuple[Array, Array]:
        h = ARM_FD_STEP
        drift = 0.5 * h * h * theta_ddot
        stack = np.stack([theta, theta + h * theta_dot + drift, theta - h * theta_dot + drift])
        pts, masses = self.points(stack)
        r = pts[0]
        acc = (pts[1] - 2.0 * r + pts[2]) / (h * h)
        g_body = -self.g * (R.T @ E3)
        d_t = -R @ (masses @ acc)
        d_r = np.sum(np.cross(r, masses[:, None] * (g_body[None, :] - acc)), axis=0)
        return d_t, d_r


@dataclass(frozen=True)
class Sinusoid:
    """``amplitude * sin(2 pi t / period + phase)`` per axis."""

    amplitude: Array = field(default_factory=lambda: np.zeros(3))
    period: float = 10.0
    phase: float = 0.0

    def __call__(self, t: float) -> Array:
        return np.asarray(self.amplitude, dtype=float) * math.sin(2.0 * math.pi * t / self.period + self.phase)


@dataclass(frozen=True)
class Surface:
    """Horizontal surface at ``height``; ``footprint`` semi-axes (x, y) or ``None`` for unbounded."""

    height: float = 0.0
    center_xy: tuple[float, float] = (0.0, 0.0)
    footprint: tuple[float, float] | None = None


@dataclass(frozen=True)
class GroundEffect:
    """Upward boost of ``fraction`` times hover thrust decaying with clearance."""

    surfaces: tuple[Surface, ...] = (Surface(),)
    fraction: float = 0.15
    length: float = 0.35
    hover_force: float = 2.13 * GRAVITY

    def __call__(self, p: Array) -> Array:
        total = 0.0
        for s in self.surfaces:
            clearance = p[2] - s.height
            if clearance <= 0.0:
                continue
            weight = 1.0
            if s.footprint is not None:
                q = ((p[0] - s.center_xy[0]) / s.footprint[0]) ** 2 + ((p[1] - s.center_xy[1]) / s.footprint[1]) ** 2
                weight = 1.0 / (1.0 + math.exp(min(50.0, 8.0 * (q - 1.0))))
            total += weight * math.exp(-clearance / self.length)
        return self.fraction * self.hover_force * total * E3


@dataclass
class DisturbanceModel:
    """Sum of the enabled sources; ``None`` disables a source."""

    arm: ArmReaction | None = None
    force: Sinusoid | None = None
    torque: Sinusoid | None = None
    ground_effect: GroundEffect | None = None

    def __call__(self, t: float, body: RigidBodyState, theta_ddot: ArrayLike) -> tuple[Array, Array]:
        d_t = np.zeros(3)
        d_r = np.zeros(3)
        if self.arm is not None:
            a_t, a_r = self.arm(body.R, body.theta, body.theta_dot, np.asarray(theta_ddot, dtype=float))
            d_t += a_t
            d_r += a_r
        if self.force is not None:
            d_t += self.force(t)
        if self.torque is not None:
            d_r += self.torque(t)
        if self.ground_effect is not None:
            d_t += self.ground_effect(body.p)
        return d_t, d_r


def arm_sweep(t: float, amplitude: float = math.radians(45.0), period: float = 10.0, n: int = 3) -> tuple[Array, Array]:
    """Scripted joint sweep on the first two joints: ``(theta_d, theta_dot_d)``."""
    w = 2.0 * math.pi / period
    th = np.zeros(n)
    thd = np.zeros(n)
    th[:2] = amplitude * math.sin(w * t)
    thd[:2] = amplitude * w * math.cos(w * t)
    return th, thd

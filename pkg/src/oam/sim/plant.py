"""Rigid-body plant with first-order actuator lags and a servoed arm.

Translational dynamics are integrated in the world frame and rotational
dynamics in the body frame; the attitude is advanced with the exponential
map so it never leaves SO(3). Disturbances enter as a world-frame force
``d_t`` and a body-frame torque ``d_r``, held constant over one step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from oam.geometry import exp_so3
from oam.robot_model import AllocationConfig, PlantParams, allocation_matrix, b_from_actuators
from oam.state import RigidBodyState

Array = NDArray[np.float64]

E3 = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class SimParams:
    dt: float = 1e-3
    control_dt: float = 2e-3
    nmpc_dt: float = 0.1
    tau_rotor: float = 0.03
    tau_servo: float = 0.06
    joint_wn: float = 20.0
    lags: bool = True

    def __post_init__(self):
        for name in ("dt", "control_dt", "nmpc_dt", "joint_wn"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        ratio = self.control_dt / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("control_dt must be a multiple of dt")

    @classmethod
    def from_dict(cls, d: dict) -> "SimParams":
        return cls(**d)


@dataclass
class PlantState:
    """Rigid body plus realised actuator states."""

    body: RigidBodyState = field(default_factory=RigidBodyState)
    F: Array = field(default_factory=lambda: np.zeros(6))
    alpha: Array = field(default_factory=lambda: np.zeros(6))

    def copy(self) -> "PlantState":
        return PlantState(self.body.copy(), self.F.copy(), self.alpha.copy())


@dataclass(frozen=True)
class ActuatorCommand:
    F: Array
    alpha: Array
    theta_d: Array
    theta_dot_d: Array


def wrap_angle(a: ArrayLike) -> Array:
    return (np.asarray(a, dtype=float) + math.pi) % (2.0 * math.pi) - math.pi


def body_wrench(A: Array, F: Array, alpha: Array) -> tuple[Array, Array]:
    w = A @ b_from_actuators(F, alpha)
    return w[:3], w[3:]


class Plant:
    """RK4 integrator for the floating base, actuator lags and joint servos."""

    def __init__(self, params: PlantParams, allocation: AllocationConfig, sim: SimParams | None = None):
        self.params = params
        self.sim = sim or SimParams()
        self.A = allocation_matrix(allocation)
        self.J = np.asarray(params.J_b, dtype=float)
        self.J_inv = np.linalg.inv(self.J)
        self.mass = params.m

    def _deriv(self, R, v, w, F, alpha, th, thd, cmd: ActuatorCommand, d_t, d_r):
        sim = self.sim
        if sim.lags:
            dF = (cmd.F - F) / sim.tau_rotor
            dalpha = wrap_angle(cmd.alpha - alpha) / sim.tau_servo
            f, tau = body_wrench(self.A, F, alpha)
        else:
            dF = np.zeros(6)
            dalpha = np.zeros(6)
            f, tau = body_wrench(self.A, cmd.F, cmd.alpha)
        acc = (R @ f + d_t) / self.mass - self.params.g * E3
        dw = self.J_inv @ (-np.cross(w, self.J @ w) + tau + d_r)
        wn = sim.joint_wn
        thdd = wn * wn * (cmd.theta_d - th) + 2.0 * wn * (cmd.theta_dot_d - thd)
        return v, acc, w, dw, dF, dalpha, thd, thdd

    def step(self, x: PlantState, cmd: ActuatorCommand, d_t: ArrayLike, d_r: ArrayLike, dt: float | None = None) -> PlantState:
        """One RK4 step; the rotation is advanced by ``exp`` of the RK4-averaged rate."""
        h = self.sim.dt if dt is None else dt
        if h <= 0.0:
            raise ValueError("dt must be positive")
        d_t = np.asarray(d_t, dtype=float)
        d_r = np.asarray(d_r, dtype=float)
        b = x.body
        y0 = (b.p, b.v, b.w, x.F, x.alpha, b.theta, b.theta_dot)
        R0 = b.R

        def stage(R, y):
            p, v, w, F, al, th, thd = y
            return self._deriv(R, v, w, F, al, th, thd, cmd, d_t, d_r)

        def advance(y, k, c):
            # k = (dp, dv, R-rate, dw, dF, dalpha, dth, dthd); rotation handled separately
            return tuple(yi + c * ki for yi, ki in zip(y, (k[0], k[1], k[3], k[4], k[5], k[6], k[7])))

        k1 = stage(R0, y0)
        k2 = stage(R0 @ exp_so3(0.5 * h * k1[2]), advance(y0, k1, 0.5 * h))
        k3 = stage(R0 @ exp_so3(0.5 * h * k2[2]), advance(y0, k2, 0.5 * h))
        k4 = stage(R0 @ exp_so3(h * k3[2]), advance(y0, k3, h))
        comb = tuple((a + 2.0 * b_ + 2.0 * c + d) / 6.0 for a, b_, c, d in zip(k1, k2, k3, k4))
        p, v, w, F, al, th, thd = advance(y0, comb, h)
        R = R0 @ exp_so3(h * comb[2])
        body = RigidBodyState(p, v, R, w, th, thd)
        body.check_finite()
        return PlantState(body, F, al)

    def realized_wrench(self, x: PlantState) -> tuple[Array, Array]:
        return body_wrench(self.A, x.F, x.alpha)


def plant_step(
    state: PlantState,
    cmd: ActuatorCommand,
    d_t: ArrayLike,
    d_r: ArrayLike,
    params: PlantParams,
    allocation: AllocationConfig | None = None,
    sim: SimParams | None = None,
    dt: float = 1e-3,
) -> PlantState:
    """Functional wrapper around :class:`Plant` for one step."""
    return Plant(params, allocation or AllocationConfig(), sim).step(state, cmd, d_t, d_r, dt)


def energy(state: PlantState, params: PlantParams) -> float:
    """Kinetic plus potential energy of the base."""
    b = state.body
    return float(0.5 * params.m * b.v @ b.v + 0.5 * b.w @ np.asarray(params.J_b) @ b.w + params.m * params.g * b.p[2])


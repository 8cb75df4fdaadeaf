"""Whole-body kinematic NMPC (second planning stage).

Single shooting over ``N_H`` Euler steps of the whole-body kinematics. The
decision vector stacks the inputs ``u_k = [v; w; theta_dot]`` knot by knot;
states are rolled out from the measured configuration. Rotations are
perturbed on the left in the world frame, so a change of ``w_j`` moves every
later knot by ``G_j = R_{j+1} Jr(dt w_j) dt``.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from oam.collision import ObstacleSet, minkowski_separation
from oam.controller import Setpoint
from oam.errors import PlanInfeasible, StalePlan
from oam.geometry import exp_so3, exp_so3_batch, right_jacobian_batch
from oam.nlp import NlpOptions, NlpProblem, Status, WarmStart, solve
from oam.robot_model import BodyEllipsoidSet, RobotModel, WholeBodyConfig

Array = NDArray[np.float64]

U_MAX_DEFAULT = np.concatenate([np.ones(3), 0.5 * math.pi * np.ones(3), 0.25 * math.pi * np.ones(3)])
MANIP_FD_STEP = 1e-5


@dataclass(frozen=True)
class NmpcParams:
    T_H: float = 1.5
    dt: float = 0.1
    Q_p: Array = field(default_factory=lambda: 5.0 * np.eye(3))
    Q_R: Array = field(default_factory=lambda: 4.0 * np.eye(3))
    R_u: Array = field(default_factory=lambda: np.diag([0.01] * 3 + [0.01] * 3 + [0.1] * 3))
    u_max: Array = field(default_factory=lambda: U_MAX_DEFAULT.copy())
    mu_v: float = 0.01
    margin: float = 1e-3
    inflation: float = 0.03
    collision_constraints: bool = True
    self_collision: bool = True
    max_inner_total: int = 60
    max_inner: int = 20
    max_step: float | None = None
    stall_tol: float = 1e-15
    max_iter: int = 12

    @property
    def N(self) -> int:
        return int(round(self.T_H / self.dt))


@dataclass(frozen=True)
class WholeBodyInput:
    v: Array
    w: Array
    theta_dot: Array

    def as_vector(self) -> Array:
        return np.concatenate([self.v, self.w, self.theta_dot])

    @classmethod
    def from_vector(cls, u: ArrayLike) -> "WholeBodyInput":
        u = np.asarray(u, dtype=float)
        return cls(u[:3].copy(), u[3:6].copy(), u[6:].copy())


def wb_kinematics_step(x: WholeBodyConfig, u: WholeBodyInput, dt: float) -> WholeBodyConfig:
    """Euler step: ``p += dt v``, ``R <- R exp(dt w)``, ``theta += dt theta_dot``."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    return WholeBodyConfig(x.p + dt * u.v, x.R @ exp_so3(dt * u.w), x.theta + dt * u.theta_dot)


# --------------------------------------------------------------------------
# manipulability and stage cost


def manipulability_batch(model: RobotModel, theta: ArrayLike, mu_v: float = 0.01) -> Array:
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    fk = model.fk_batch(np.zeros((theta.shape[0], 3)), np.broadcast_to(np.eye(3), (theta.shape[0], 3, 3)), theta)
    r = fk.ee_p[:, None, :] - fk.joint_pos  # (K, n, 3)
    Jv = np.cross(fk.joint_axis, r).transpose(0, 2, 1)  # (K, 3, n)
    if model.manipulator.planar:
        Jv = model.motion_plane_basis() @ Jv
        return mu_v * np.linalg.det(Jv @ Jv.transpose(0, 2, 1))
    Jw = fk.joint_axis.transpose(0, 2, 1)
    # the orientation term has no listed weight; it is kept with the same weight
    return mu_v * (np.linalg.det(Jv @ Jv.transpose(0, 2, 1)) + np.linalg.det(Jw @ Jw.transpose(0, 2, 1)))


def _manip_from_fk(model: RobotModel, fk, R: Array, mu_v: float) -> Array:
    """Same index as ``manipulability_batch`` from an existing world-frame FK (K knots, base rotations ``R``)."""
    r = fk.ee_p[:, None, :] - fk.joint_pos
    Jv = _cross(fk.joint_axis, r).transpose(0, 2, 1)
    if model.manipulator.planar:
        Jv = (model.motion_plane_basis() @ R.transpose(0, 2, 1)) @ Jv
        return mu_v * np.linalg.det(Jv @ Jv.transpose(0, 2, 1))
    Jw = fk.joint_axis.transpose(0, 2, 1)
    return mu_v * (np.linalg.det(Jv @ Jv.transpose(0, 2, 1)) + np.linalg.det(Jw @ Jw.transpose(0, 2, 1)))


def manipulability(theta: ArrayLike, model: RobotModel | None = None, mu_v: float = 0.01) -> float:
    return float(manipulability_batch(model or RobotModel(), theta, mu_v)[0])


def _manip_and_grad(model: RobotModel, theta: Array, mu_v: float) -> tuple[Array, Array]:
    K, n = theta.shape
    h = MANIP_FD_STEP
    stack = [theta]
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        stack.append(theta + e)
        stack.append(theta - e)
    vals = manipulability_batch(model, np.concatenate(stack), mu_v).reshape(2 * n + 1, K)
    grad = np.stack([(vals[1 + 2 * i] - vals[2 + 2 * i]) / (2 * h) for i in range(n)], axis=1)
    return vals[0], grad


def stage_cost(
    x: WholeBodyConfig,
    ee_ref: tuple[ArrayLike, ArrayLike | None],
    u: WholeBodyInput | None,
    model: RobotModel,
    params: NmpcParams | None = None,
) -> float:
    """State cost plus input cost; the orientation term is skipped when the reference rotation is ``None``."""
    params = params or NmpcParams()
    p_ref, R_ref = ee_ref
    ee_p, ee_R = model.ee_pose(x)
    d = ee_p - np.asarray(p_ref, dtype=float)
    cost = float(d @ params.Q_p @ d) - manipulability(x.theta, model, params.mu_v)
    if R_ref is not None:
        cost += float(np.trace(params.Q_R @ (np.eye(3) - np.asarray(R_ref).T @ ee_R)))
    if u is not None:
        uv = u.as_vector()
        cost += float(uv @ params.R_u @ uv)
    return cost


# --------------------------------------------------------------------------
# plans


@dataclass(frozen=True)
class TrajectoryPlan:
    stamp: float
    dt: float
    p: Array  # (N+1, 3)
    R: Array  # (N+1, 3, 3)
    theta: Array  # (N+1, n)
    u: Array  # (N, 9)
    status: str = Status.CONVERGED.value
    stats: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.u.shape[0]

    @property
    def horizon(self) -> float:
        return self.N * self.dt

    def config(self, k: int) -> WholeBodyConfig:
        return WholeBodyConfig(self.p[k], self.R[k], self.theta[k])

    def to_dict(self) -> dict:
        return {
            "stamp": self.stamp,
            "dt": self.dt,
            "p": self.p.tolist(),
            "R": self.R.reshape(-1, 9).tolist(),
            "theta": self.theta.tolist(),
            "u": self.u.tolist(),
            "status": self.status,
        }


def plan_to_setpoints(plan: TrajectoryPlan, t: float) -> tuple[Setpoint, Array, Array]:
    """Base setpoint and arm ``(theta_d, theta_dot_d)`` at time ``t``.

    Inputs are zero-order held; positions and joint angles are linearly
    interpolated, rotations geodesically. Accelerations come from
    differencing consecutive inputs.
    """
    s = (t - plan.stamp) / plan.dt
    if s < -1e-9 or s > plan.N + 1e-9:
        raise StalePlan(f"t={t:.3f} outside plan [{plan.stamp:.3f}, {plan.stamp + plan.horizon:.3f}]")
    s = min(max(s, 0.0), float(plan.N))
    k = min(int(math.floor(s + 1e-12)), plan.N - 1)
    a = s - k
    u = plan.u[k]
    u_next = plan.u[min(k + 1, plan.N - 1)]
    p_d = (1.0 - a) * plan.p[k] + a * plan.p[k + 1]
    R_d = plan.R[k] @ exp_so3(a * plan.dt * u[3:6])
    du = (u_next - u) / plan.dt
    sp = Setpoint(p_d=p_d, v_d=u[:3], a_d=du[:3], R_d=R_d, w_d=u[3:6], dw_d=du[3:6])
    theta_d = (1.0 - a) * plan.theta[k] + a * plan.theta[k + 1]
    return sp, theta_d, u[6:].copy()


def hold_plan(x: WholeBodyConfig, stamp: float, params: NmpcParams) -> TrajectoryPlan:
    """A zero-input plan that keeps the given configuration (hover-hold)."""
    N = params.N
    return TrajectoryPlan(
        stamp,
        params.dt,
        np.tile(x.p, (N + 1, 1)),
        np.tile(x.R, (N + 1, 1, 1)),
        np.tile(x.theta, (N + 1, 1)),
        np.zeros((N, 3 + 3 + x.theta.size)),
        status="Hold",
    )


# --------------------------------------------------------------------------
# the OCP


def _cross(a: Array, b: Array) -> Array:
    """Cross product over the last axis (faster than ``np.cross`` for small stacks)."""
    return np.stack(
        [
            a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
            a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
            a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
        ],
        axis=-1,
    )


class _Rollout:
    """States, kinematics and sensitivity ingredients for one input sequence.

    Points are indexed body by body with the end effector last.
    """

    def __init__(self, nmpc: "NmpcPlanner", x0: WholeBodyConfig, U: Array, with_sens: bool):
        m = nmpc.model
        dt = nmpc.params.dt
        N = U.shape[0]
        v, w, td = U[:, :3], U[:, 3:6], U[:, 6:]
        p = np.empty((N + 1, 3))
        p[0] = x0.p
        p[1:] = x0.p + dt * np.cumsum(v, axis=0)
        th = np.empty((N + 1, td.shape[1]))
        th[0] = x0.theta
        th[1:] = x0.theta + dt * np.cumsum(td, axis=0)
        E = exp_so3_batch(dt * w)
        R = np.empty((N + 1, 3, 3))
        R[0] = x0.R
        for k in range(N):
            R[k + 1] = R[k] @ E[k]
        self.p, self.R, self.theta = p, R, th
        self.fk = fk = m.fk_batch(p[1:], R[1:], th[1:])  # knots 1..N
        if not with_sens:
            return
        self.G = R[1:] @ right_jacobian_batch(dt * w) * dt  # (N, 3, 3)
        pts = np.concatenate([fk.body_centers, fk.ee_p[:, None, :]], axis=1)  # (N, P, 3)
        mask = nmpc._point_joint_mask  # (P, n)
        self.lever = pts - p[1:, None, :]
        r = pts[:, :, None, :] - fk.joint_pos[:, None, :, :]
        # d point / d theta_i and d body-rotation / d theta_i, shape (N, P, n, 3)
        self.Jq = _cross(np.broadcast_to(fk.joint_axis[:, None], r.shape), r) * mask[None, :, :, None]
        self.Jr = fk.joint_axis[:, None, :, :] * mask[None, :, :, None]


class NmpcPlanner:
    """Builds and solves the receding-horizon problem; keeps the warm start between calls."""

    def __init__(
        self,
        model: RobotModel,
        obstacles: ObstacleSet | None = None,
        params: NmpcParams | None = None,
    ):
        self.model = model
        self.obstacles = obstacles or ObstacleSet()
        self.params = params or NmpcParams()
        self.bodies: BodyEllipsoidSet = model.bodies.inflated(self.params.inflation)
        self._warm: WarmStart | None = None
        self._body_shapes = np.stack(self.bodies.shapes)
        self._body_sqrt_tr = np.sqrt(np.einsum("bii->b", self._body_shapes))
        n_j = model.manipulator.n_joints
        self.n_u = 6 + n_j
        # link b is moved by joints 0..b-1; the end effector (last point) by all
        nb = self.bodies.n_bodies
        self._point_joint_mask = np.zeros((nb + 1, n_j))
        for b in range(1, nb):
            self._point_joint_mask[b, :b] = 1.0
        self._point_joint_mask[nb] = 1.0

    def reset(self) -> None:
        self._warm = None

    # ---- Jacobian assembly

    def _sens(self, ro: _Rollout, pt: Array, a: Array, g: Array) -> tuple[Array, Array, Array]:
        """Per-row sensitivities for scalars with point gradient ``a`` and rotation gradient ``g``.

        ``a``, ``g`` have shape (N, m, 3) and ``pt`` (m,) gives the point index
        of each column. Returns ``alpha`` (times dt), ``beta``, ``gamma`` (times dt).
        """
        dt = self.params.dt
        alpha = dt * a
        beta = _cross(ro.lever[:, pt], a) + g
        gamma = dt * (np.einsum("kmic,kmc->kmi", ro.Jq[:, pt], a) + np.einsum("kmic,kmc->kmi", ro.Jr[:, pt], g))
        return alpha, beta, gamma

    def _assemble(self, alpha: Array, beta: Array, gamma: Array, G: Array) -> Array:
        """Dense rows for scalar functions of the knots, inputs arranged (N, m, .)."""
        N, m = alpha.shape[:2]
        nu = self.n_u
        J = np.zeros((N, m, N, nu))
        J[..., :3] = alpha[:, :, None, :]
        J[..., 3:6] = np.einsum("jba,kmb->kmja", G, beta)
        J[..., 6:] = gamma[:, :, None, :]
        # input j only affects knots k > j (knot index here is k - 1)
        J *= self._causal[:, None, :, None]
        return J.reshape(N * m, N * nu)

    # ---- problem

    def _problem(self, x0: WholeBodyConfig, p_ref: Array, R_ref: Array | None, U0: Array):
        prm = self.params
        N, dt, nu = prm.N, prm.dt, self.n_u
        model = self.model
        use_R = R_ref is not None
        Qp, QR, Ru = prm.Q_p, prm.Q_R, prm.R_u
        H_u = 2.0 * np.kron(np.eye(N), Ru)
        Qp_blk = np.kron(np.eye(N), Qp)
        self._causal = (np.arange(N)[None, :] < np.arange(1, N + 1)[:, None]).astype(float)
        ground = self.obstacles.ground_height
        obst = self.obstacles.ellipsoids if prm.collision_constraints else ()
        use_ground = prm.collision_constraints and ground is not None
        nb = self.bodies.n_bodies
        ee = nb
        A_th, b_th = model.manipulator.A_theta, model.manipulator.b_theta
        eye3 = np.broadcast_to(np.eye(3), (N, 3, 3))
        zeros3 = np.zeros((N, 3, 3))
        cache: dict = {}

        def rollout(z, sens):
            key = z.tobytes()
            ro = cache.get(key)
            if ro is None or (sens and not hasattr(ro, "G")):
                cache.clear()
                ro = cache[key] = _Rollout(self, x0, z.reshape(N, nu), sens)
            return ro

        def objective(z, derivatives=True):
            ro = rollout(z, derivatives)
            d = ro.fk.ee_p - p_ref
            f = float(np.einsum("ki,ij,kj->", d, Qp, d))
            if use_R:
                A = ro.fk.ee_R @ QR @ R_ref.transpose(0, 2, 1)
                f += float(N * np.trace(QR) - np.einsum("kii->", A))
            if derivatives:
                phi_m, gm = _manip_and_grad(model, ro.theta[1:], prm.mu_v)
            else:
                phi_m = _manip_from_fk(model, ro.fk, ro.R[1:], prm.mu_v)
            f += 0.5 * float(z @ H_u @ z) - float(np.sum(phi_m))
            if not derivatives:
                return f
            G = ro.G
            pt = np.full(3, ee)
            Jp = self._assemble(*self._sens(ro, pt, eye3, zeros3), G)  # rows (k, c)
            g = 2.0 * Jp.T @ (d @ Qp).reshape(-1) + H_u @ z
            H = 2.0 * Jp.T @ Qp_blk @ Jp + H_u
            # manipulability depends on the joints only: reverse cumulative sums
            gth = -dt * np.cumsum(gm[::-1], axis=0)[::-1]
            g.reshape(N, nu)[:, 6:] += gth
            if use_R:
                grad_phi = np.stack([A[:, 2, 1] - A[:, 1, 2], A[:, 0, 2] - A[:, 2, 0], A[:, 1, 0] - A[:, 0, 1]], axis=1)
                JR = self._assemble(*self._sens(ro, pt, zeros3, eye3), G)
                g += JR.T @ grad_phi.reshape(-1)
                S = 0.5 * (A + A.transpose(0, 2, 1))
                HR = np.einsum("k,ij->kij", np.einsum("kii->k", A), np.eye(3)) - S
                w_, V_ = np.linalg.eigh(HR)
                HR = (V_ * np.maximum(w_, 0.0)[:, None, :]) @ V_.transpose(0, 2, 1)
                H += JR.T @ (HR @ JR.reshape(N, 3, -1)).reshape(3 * N, -1)
            return f, g, H

        def ineq(z, derivatives=True):
            ro = rollout(z, derivatives)
            fk = ro.fk
            vals, sens = [], []
            if obst or prm.self_collision:
                Qw = fk.body_R @ self._body_shapes[None] @ fk.body_R.transpose(0, 1, 3, 2)  # (N, B, 3, 3)
            for ob in obst:
                out = _minkowski_batch(fk.body_centers, Qw, self._body_sqrt_tr, ob.center, ob.shape, ob.sqrt_trace, derivatives)
                if not derivatives:
                    vals.append(out - prm.margin)
                    continue
                h, dc, dphi, _ = out
                vals.append(h - prm.margin)
                sens.append(self._sens(ro, np.arange(nb), dc, dphi))
            if prm.self_collision and nb > 1:
                ia, ib = 0, nb - 1
                out = _minkowski_batch(
                    fk.body_centers[:, ia : ia + 1],
                    Qw[:, ia : ia + 1],
                    self._body_sqrt_tr[ia],
                    fk.body_centers[:, ib : ib + 1],
                    Qw[:, ib : ib + 1],
                    self._body_sqrt_tr[ib],
                    derivatives,
                )
                if not derivatives:
                    vals.append(out - prm.margin)
                else:
                    h, dc, ga, gb = out
                    vals.append(h - prm.margin)
                    sa = self._sens(ro, np.array([ia]), dc, ga)
                    sb = self._sens(ro, np.array([ib]), -dc, gb)
                    sens.append(tuple(x + y for x, y in zip(sa, sb)))
            if use_ground:
                vals.append(fk.body_centers[:, :, 2] - self.bodies.radii[None, :] - ground - prm.margin)
                if derivatives:
                    e3 = np.zeros((N, nb, 3))
                    e3[..., 2] = 1.0
                    sens.append(self._sens(ro, np.arange(nb), e3, np.zeros((N, nb, 3))))
            # joint polytope: b - A theta >= 0
            vals.append(b_th[None, :] - ro.theta[1:] @ A_th.T)
            # knot-major ordering so multipliers can be shifted in time
            v = np.concatenate(vals, axis=1).reshape(-1)
            if not derivatives:
                return v
            m_th = A_th.shape[0]
            sens.append((np.zeros((N, m_th, 3)), np.zeros((N, m_th, 3)), np.broadcast_to(-dt * A_th, (N, m_th, nu - 6))))
            alpha, beta, gamma = (np.concatenate(parts, axis=1) for parts in zip(*sens))
            return v, self._assemble(alpha, beta, gamma, ro.G)

        lb = np.tile(-prm.u_max, N)
        ub = np.tile(prm.u_max, N)
        return NlpProblem(N * nu, objective, np.clip(U0.reshape(-1), lb, ub), ineq=ineq, lb=lb, ub=ub)


    # ---- public

    def solve(
        self,
        x0: WholeBodyConfig,
        p_ref: ArrayLike,
        R_ref: ArrayLike | None = None,
        stamp: float = 0.0,
        warm_start: bool = True,
        shift: bool = True,
    ) -> TrajectoryPlan:
        """Solve from ``x0`` against a reference window of ``N_H + 1`` EE samples (knot 0 unused)."""
        prm = self.params
        N, nu = prm.N, self.n_u
        p_ref = np.asarray(p_ref, dtype=float)
        if p_ref.shape[0] == N + 1:
            p_ref = p_ref[1:]
        if R_ref is not None:
            R_ref = np.asarray(R_ref, dtype=float)
            if R_ref.shape[0] == N + 1:
                R_ref = R_ref[1:]
        ws = None
        if warm_start and self._warm is not None:
            ws = self._shifted_warm(shift)
            U0 = ws.z.reshape(N, nu)
        else:
            U0 = np.zeros((N, nu))
        problem = self._problem(x0, p_ref, R_ref, U0)
        if ws is not None:
            ws = WarmStart(problem.x0, ws.lam, ws.mu, ws.rho)
        opts = NlpOptions(
            tol_eq=1e-5,
            tol_ineq=1e-6,
            tol_opt=1e-5,
            max_iter=prm.max_iter,
            max_inner=prm.max_inner,
            max_inner_total=prm.max_inner_total,
            rho0=10.0,
            max_step=prm.max_step,
            stall_tol=prm.stall_tol,
        )
        t0 = time.perf_counter()
        sol = solve(problem, opts, ws)
        wall = time.perf_counter() - t0
        feasible = sol.min_ineq_value >= -opts.tol_ineq and np.all(np.isfinite(sol.z_star))
        stats = sol.stats()
        stats["wall_time_ms"] = 1e3 * wall
        U = sol.z_star.reshape(N, nu)
        ro = _Rollout(self, x0, U, False)
        stats["min_certificate"] = self._min_certificate(ro)
        if not feasible:
            self._warm = None
            raise PlanInfeasible(f"NMPC solve ended {sol.status.value} with constraint violation", solution=sol)
        self._warm = sol.warm_start()
        status = sol.status.value if sol.converged else "Suboptimal"
        return TrajectoryPlan(stamp, prm.dt, ro.p, ro.R, ro.theta, U.copy(), status=status, stats=stats)

    def _shifted_warm(self, shift: bool) -> WarmStart:
        ws = self._warm
        N, nu = self.params.N, self.n_u
        if not shift:
            return WarmStart(ws.z.copy(), None if ws.lam is None else ws.lam.copy(), ws.mu.copy(), ws.rho)
        U = ws.z.reshape(N, nu)
        U = np.vstack([U[1:], U[-1:]])
        mu = ws.mu
        n_box = 2 * N * nu
        n_g = mu.size - n_box
        if n_g > 0 and n_g % N == 0:
            g = mu[:n_g].reshape(N, -1)
            g = np.vstack([g[1:], g[-1:]])
            box = mu[n_g:].reshape(2, N, nu)
            box = np.concatenate([box[:, 1:], box[:, -1:]], axis=1)
            mu = np.concatenate([g.reshape(-1), box.reshape(-1)])
        return WarmStart(U.reshape(-1), ws.lam, mu, ws.rho)

    def _min_certificate(self, ro: _Rollout) -> float:
        """Smallest Minkowski certificate or ground clearance over the plan's knots."""
        vals = [math.inf]
        centers, body_R = ro.fk.body_centers, ro.fk.body_R
        for ob in self.obstacles.ellipsoids:
            for bi in range(self.bodies.n_bodies):
                Qa = body_R[:, bi] @ self.bodies.shapes[bi] @ body_R[:, bi].transpose(0, 2, 1)
                h = _minkowski_batch(centers[:, bi], Qa, self._body_sqrt_tr[bi], ob.center, ob.shape, ob.sqrt_trace, False)
                vals.append(float(np.min(h)))
        if self.obstacles.ground_height is not None:
            clear = centers[:, :, 2] - self.bodies.radii[None, :] - self.obstacles.ground_height
            vals.append(float(np.min(clear)))
        return min(vals)


def _minkowski_batch(ca, Qa, ta, cb, Qb, tb, derivatives: bool = True):
    """Vectorised certificate over any leading axes; ``cb``/``Qb`` may be fixed.

    ``ta``/``tb`` are square-rooted traces broadcasting against the leading axes.
    Returns ``h`` or ``(h, dh/dca, dh/dphi_a, dh/dphi_b)``.
    """
    ta = np.asarray(ta, dtype=float)
    tb = np.asarray(tb, dtype=float)
    Qb = np.asarray(Qb, dtype=float)
    s = ta + tb
    Q = (s / ta)[..., None, None] * Qa + (s / tb)[..., None, None] * Qb
    d = ca - cb
    y = np.linalg.solve(Q, d[..., None])[..., 0]
    h = np.einsum("...i,...i->...", d, y) - 1.0
    if not derivatives:
        return h
    Qa_y = np.einsum("...ij,...j->...i", Qa, y)
    Qb_y = np.einsum("...ij,...j->...i", Qb, y)
    ga = 2.0 * (s / ta)[..., None] * _cross(y, Qa_y)
    gb = 2.0 * (s / tb)[..., None] * _cross(y, Qb_y)
    return h, 2.0 * y, ga, gb


def solve_nmpc(
    x0: WholeBodyConfig,
    p_ref: ArrayLike,
    R_ref: ArrayLike | None,
    obstacles: ObstacleSet,
    model: RobotModel,
    params: NmpcParams | None = None,
    stamp: float = 0.0,
) -> TrajectoryPlan:
    """One cold-started solve; use :class:`NmpcPlanner` to keep warm starts."""
    return NmpcPlanner(model, obstacles, params).solve(x0, p_ref, R_ref, stamp, warm_start=False)


def validate_plan(plan: TrajectoryPlan, x0: WholeBodyConfig, model: RobotModel, params: NmpcParams, obstacles: ObstacleSet) -> dict:
    """Independent post-solve checks: dynamics residuals, SO(3) validity and certificates."""
    dyn = 0.0
    x = x0
    for k in range(plan.N):
        x = wb_kinematics_step(x, WholeBodyInput.from_vector(plan.u[k]), plan.dt)
        dyn = max(
            dyn,
            float(np.max(np.abs(x.p - plan.p[k + 1]))),
            float(np.max(np.abs(x.R - plan.R[k + 1]))),
            float(np.max(np.abs(x.theta - plan.theta[k + 1]))),
        )
    ortho = max(float(np.linalg.norm(R.T @ R - np.eye(3))) for R in plan.R)
    bodies = model.bodies.inflated(params.inflation)
    cert = math.inf
    for k in range(1, plan.N + 1):
        xk = plan.config(k)
        ells = model.body_ellipsoids(xk, bodies)
        for e in ells:
            for ob in obstacles.ellipsoids:
                cert = min(cert, minkowski_separation(e, ob))
        if obstacles.ground_height is not None:
            centers = model.forward_kinematics(xk).body_centers[0]
            cert = min(cert, float(np.min(centers[:, 2] - bodies.radii - obstacles.ground_height)))
    joint = float(np.min([np.min(model.manipulator.joint_margin(th)) for th in plan.theta[1:]]))
    u_excess = float(np.max(np.abs(plan.u) - params.u_max[None, :]))
    return {"dynamics_residual": dyn, "orthonormality": ortho, "min_certificate": cert, "joint_margin": joint, "input_excess": u_excess}


# --------------------------------------------------------------------------
# asynchronous use


class PlanBuffer:
    """Latest-plan mailbox shared between the NMPC worker and the control loop."""

    def __init__(self):
        self._lock = threading.Lock()
        self._plan: TrajectoryPlan | None = None

    def publish(self, plan: TrajectoryPlan) -> None:
        with self._lock:
            self._plan = plan

    def latest(self) -> TrajectoryPlan | None:
        with self._lock:
            return self._plan


class NmpcWorker:
    """Background thread solving whenever a new request is posted.

    ``request_fn`` is called with no arguments and must return
    ``(x0, p_ref, R_ref, stamp)``; results go to ``buffer``. Failures keep
    the previous plan and are counted in ``failures``.
    """

    def __init__(self, planner: NmpcPlanner, buffer: PlanBuffer, request_fn: Callable[[], tuple], period: float = 0.1):
        self.planner = planner
        self.buffer = buffer
        self.request_fn = request_fn
        self.period = period
        self.failures = 0
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._loop, daemon=True)

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        self._thread.join()

    def _loop(self) -> None:
        while not self._stop.is_set():
            t0 = time.perf_counter()
            try:
                self.buffer.publish(self.planner.solve(*self.request_fn()))
            except PlanInfeasible:
                self.failures += 1
            self._stop.wait(max(0.0, self.period - (time.perf_counter() - t0)))

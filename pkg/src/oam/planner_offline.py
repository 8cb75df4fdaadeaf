"""End-effector trajectory optimisation (first planning stage).

Translation and rotation are planned separately. Both use jerk-level
inputs integrated by the staged Runge-Kutta scheme, which is exact for a
triple integrator, so the knot states are linear in the jerks and the
problem is written in condensed form: the only decision variables are the
``N x 3`` jerks (linear or angular).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from oam.collision import ObstacleSet, point_barrier
from oam.errors import PlanInfeasible, StartInCollision
from oam.geometry import (
    exp_so3,
    log_so3,
    reorthonormalize,
    right_jacobian,
    right_jacobian_inv,
    slerp,
)
from oam.nlp import NlpOptions, NlpProblem, solve

Array = NDArray[np.float64]

BARRIER_MARGIN = 1e-3
TERMINAL_TRACE_TOL = 1e-6


@dataclass(frozen=True)
class OfflineParams:
    T_f: float = 15.0
    dt: float = 0.1
    R_v: Array = field(default_factory=lambda: np.eye(3))
    R_w: Array = field(default_factory=lambda: np.eye(3))
    gamma: float = 3.0
    margin: float = BARRIER_MARGIN
    ground_margin: float = 0.0

    @property
    def N(self) -> int:
        return int(round(self.T_f / self.dt))


# --------------------------------------------------------------------------
# staged RK4 kinematics


def ee_kinematics_step_translation(x: ArrayLike, jerk: ArrayLike, dt: float) -> Array:
    """One staged Runge-Kutta step of ``[p; v; a]`` under constant jerk."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    j = np.asarray(jerk, dtype=float)
    p, v, a = x[:3], x[3:6], x[6:9]
    v1 = v + 0.5 * dt * a
    a1 = a + 0.5 * dt * j
    v2 = v + 0.5 * dt * a1
    a2 = a + 0.5 * dt * j
    v3 = v + dt * a2
    a3 = a + dt * j
    return np.concatenate(
        [
            p + dt / 6.0 * (v + 2.0 * v1 + 2.0 * v2 + v3),
            v + dt / 6.0 * (a + 2.0 * a1 + 2.0 * a2 + a3),
            a + dt * j,
        ]
    )


def rotation_increment(w: ArrayLike, dw: ArrayLike, ddw: ArrayLike, dt: float) -> Array:
    """The body-frame rotation vector applied by one staged step."""
    w, dw, ddw = (np.asarray(a, dtype=float) for a in (w, dw, ddw))
    w1 = w + 0.5 * dt * dw
    dw1 = dw + 0.5 * dt * ddw
    w2 = w + 0.5 * dt * dw1
    dw2 = dw + 0.5 * dt * ddw
    w3 = w + dt * dw2
    return dt / 6.0 * (w + 2.0 * w1 + 2.0 * w2 + w3)


def ee_kinematics_step_rotation(
    R: ArrayLike, w: ArrayLike, dw: ArrayLike, ddw: ArrayLike, dt: float, reproject: bool = True
) -> tuple[Array, Array, Array]:
    """One staged step of ``(R, w, dw)`` under constant angular jerk ``ddw``."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    w, dw, ddw = (np.asarray(a, dtype=float) for a in (w, dw, ddw))
    phi = rotation_increment(w, dw, ddw, dt)
    dw1 = dw + 0.5 * dt * ddw
    dw2 = dw + 0.5 * dt * ddw
    dw3 = dw + dt * ddw
    R_next = np.asarray(R, dtype=float) @ exp_so3(phi)
    if reproject:
        R_next = reorthonormalize(R_next)
    w_next = w + dt / 6.0 * (dw + 2.0 * dw1 + 2.0 * dw2 + dw3)
    return R_next, w_next, dw + dt * ddw


# --------------------------------------------------------------------------
# condensed linear maps


@dataclass(frozen=True)
class TripleIntegratorMaps:
    """Scalar maps from a jerk sequence ``(N,)`` to knot values ``(N+1,)``.

    ``free_*`` columns give the response to the initial ``(x, dx, ddx)``;
    ``S_*`` give the response to the jerks. ``S_inc`` maps jerks to the
    per-step increment ``x_{k+1} - x_k`` (used for rotations).
    """

    S_x: Array
    S_v: Array
    S_a: Array
    S_inc: Array
    free_x: Array
    free_v: Array
    free_a: Array

    @classmethod
    def build(cls, N: int, dt: float) -> "TripleIntegratorMaps":
        A = np.array([[1.0, dt, 0.5 * dt * dt], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])
        B = np.array([dt**3 / 6.0, 0.5 * dt * dt, dt])
        free = np.empty((N + 1, 3, 3))
        free[0] = np.eye(3)
        for k in range(N):
            free[k + 1] = A @ free[k]
        # impulse response: column j affects knots k > j
        resp = np.zeros((N + 1, 3))
        x = B.copy()
        for m in range(N):
            resp[m + 1] = x
            x = A @ x
        S = np.zeros((3, N + 1, N))
        for j in range(N):
            S[:, j + 1 :, j] = resp[1 : N + 1 - j].T
        S_inc = S[0, 1:, :] - S[0, :-1, :]
        return cls(S[0], S[1], S[2], S_inc, free[:, 0, :], free[:, 1, :], free[:, 2, :])


# --------------------------------------------------------------------------
# plans


@dataclass
class EeTrajectory:
    """Knots of the end-effector plan; ``R``/``w``/``dw`` are ``None`` when orientation is free."""

    dt: float
    p: Array
    v: Array
    a: Array
    jerk: Array
    R: Array | None = None
    w: Array | None = None
    dw: Array | None = None
    ddw: Array | None = None
    stats: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.p.shape[0] - 1

    @property
    def T(self) -> float:
        return self.N * self.dt

    @property
    def times(self) -> Array:
        return self.dt * np.arange(self.N + 1)

    @property
    def has_orientation(self) -> bool:
        return self.R is not None

    def sample(self, t: float) -> tuple[Array, Array | None]:
        """Linear position / geodesic orientation interpolation, holding the last knot past the end."""
        s = min(max(t / self.dt, 0.0), float(self.N))
        k = min(int(math.floor(s)), self.N - 1) if self.N > 0 else 0
        u = s - k
        if self.N == 0:
            return self.p[0].copy(), None if self.R is None else self.R[0].copy()
        p = (1.0 - u) * self.p[k] + u * self.p[k + 1]
        R = None if self.R is None else slerp(self.R[k], self.R[k + 1], u)
        return p, R

    def window(self, t0: float, n: int, dt: float) -> tuple[Array, Array | None]:
        """``n`` samples starting at ``t0`` with spacing ``dt``."""
        ps, Rs = [], []
        for i in range(n):
            p, R = self.sample(t0 + i * dt)
            ps.append(p)
            Rs.append(R)
        return np.array(ps), (None if self.R is None else np.array(Rs))

    def to_dict(self) -> dict[str, Any]:
        knots = []
        for k in range(self.N + 1):
            row = {"t": round(k * self.dt, 9), "p": self.p[k].tolist(), "v": self.v[k].tolist()}
            if self.R is not None:
                row["R"] = self.R[k].reshape(-1).tolist()
                row["w"] = self.w[k].tolist()
            knots.append(row)
        return {"dt": self.dt, "knots": knots, "stats": self.stats}


# --------------------------------------------------------------------------
# translation


def _min_norm_equality(E: Array, e: Array) -> Array:
    return E.T @ np.linalg.solve(E @ E.T, e)


def plan_ee_translation(
    start: ArrayLike,
    goal: ArrayLike,
    obstacles: ObstacleSet | None = None,
    params: OfflineParams | None = None,
    ee_radius: float = 0.0,
    opts: NlpOptions | None = None,
) -> EeTrajectory:
    """Minimum-jerk path from rest to rest with rate-barrier obstacle constraints."""
    params = params or OfflineParams()
    obstacles = obstacles or ObstacleSet()
    p0 = np.asarray(start, dtype=float)
    pg = np.asarray(goal, dtype=float)
    N, dt = params.N, params.dt
    maps = TripleIntegratorMaps.build(N, dt)
    obs = obstacles.inflated(ee_radius) if ee_radius > 0 else obstacles
    ells = obs.ellipsoids
    ground = None if obs.ground_height is None else obs.ground_height + ee_radius + params.ground_margin

    for e in ells:
        if point_barrier(p0, e)[0] <= 0.0:
            raise StartInCollision("end-effector start lies inside an obstacle")
        if point_barrier(pg, e)[0] <= 0.0:
            raise PlanInfeasible("end-effector goal lies inside an obstacle")
    if ground is not None and (p0[2] < ground or pg[2] < ground):
        raise StartInCollision("end-effector start or goal is below the ground clearance")

    # z layout: [jx (N), jy (N), jz (N)]
    W = np.asarray(params.R_v, dtype=float)
    H = 2.0 * np.kron(W, np.eye(N))
    free_p = np.outer(maps.free_x[:, 0], p0)  # zero initial velocity/acceleration
    # terminal equalities: p_N = goal, v_N = 0, a_N = 0
    E = np.zeros((9, 3 * N))
    e = np.zeros(9)
    for ax in range(3):
        sl = slice(ax * N, (ax + 1) * N)
        E[ax, sl] = maps.S_x[N]
        E[3 + ax, sl] = maps.S_v[N]
        E[6 + ax, sl] = maps.S_a[N]
        e[ax] = pg[ax] - free_p[N, ax]

    def rollout(z):
        J = z.reshape(3, N).T
        return free_p + maps.S_x @ J, maps.S_v @ J

    def objective(z, derivatives=True):
        f = 0.5 * z @ H @ z
        return (f, H @ z, H) if derivatives else f

    def eq(z, derivatives=True):
        c = E @ z - e
        return (c, E) if derivatives else c

    knots = np.arange(1, N + 1)
    gamma = params.gamma

    def ineq(z, derivatives=True):
        P, V = rollout(z)
        vals, jacs = [], []
        for ob in ells:
            d = P[knots] - ob.center
            Qd = d @ ob.shape_inv
            h = np.einsum("ki,ki->k", d, Qd) - 1.0
            vals.append(2.0 * np.einsum("ki,ki->k", Qd, V[knots]) + gamma * h - params.margin)
            if derivatives:
                gp = 2.0 * V[knots] @ ob.shape_inv + 2.0 * gamma * Qd
                gv = 2.0 * Qd
                Jr = np.zeros((knots.size, 3 * N))
                for ax in range(3):
                    Jr[:, ax * N : (ax + 1) * N] = gp[:, ax, None] * maps.S_x[knots] + gv[:, ax, None] * maps.S_v[knots]
                jacs.append(Jr)
        if ground is not None:
            vals.append(P[knots, 2] - ground - params.margin)
            if derivatives:
                Jr = np.zeros((knots.size, 3 * N))
                Jr[:, 2 * N :] = maps.S_x[knots]
                jacs.append(Jr)
        v = np.concatenate(vals) if vals else np.zeros(0)
        if not derivatives:
            return v
        return v, (np.vstack(jacs) if jacs else np.zeros((0, 3 * N)))

    z0 = _weighted_eq_qp(H, E, e)
    if ells:
        P0, _ = rollout(z0)
        target = _detour_path(P0, ells, ground)
        if target is not None:
            # fit the detoured path in jerk space, keeping the terminal rows exact
            M = np.kron(np.eye(3), maps.S_x[1:])
            resid = (target - free_p)[1:].T.reshape(-1)
            Hfit = 2.0 * (M.T @ M) + 1e-6 * H
            z0 = _weighted_eq_qp(Hfit, E, e, 2.0 * M.T @ resid)
    has_ineq = bool(ells) or ground is not None
    problem = NlpProblem(3 * N, objective, z0, eq=eq, ineq=ineq if has_ineq else None)
    sol = solve(problem, opts or NlpOptions())
    if not sol.converged:
        raise PlanInfeasible(f"translation plan failed: {sol.status.value}", solution=sol)
    z = sol.z_star
    P, V = rollout(z)
    J = z.reshape(3, N).T
    A = maps.S_a @ J
    traj = EeTrajectory(dt, P, V, A, J, stats={"translation": sol.stats()})
    _verify_translation(traj, pg, ells, params)
    return traj


def _weighted_eq_qp(H: Array, E: Array, e: Array, q: Array | None = None) -> Array:
    """``argmin 0.5 z^T H z - q^T z`` subject to ``E z = e``."""
    n, m = H.shape[0], E.shape[0]
    K = np.block([[H, E.T], [E, np.zeros((m, m))]])
    rhs = np.concatenate([np.zeros(n) if q is None else q, e])
    return np.linalg.solve(K, rhs)[:n]


def _detour_path(P: Array, ells, ground: float | None, scale: float = 1.3) -> Array | None:
    """Push knots lying inside (scaled) obstacles sideways out of them.

    The push is perpendicular to the local path direction, away from the
    centre; when the path runs through the centre it goes up (+z), or along
    the first perpendicular axis otherwise. Returns ``None`` if nothing moves.
    """
    out = P.copy()
    moved = False
    tang = np.gradient(P, axis=0)
    for ob in ells:
        Qi = ob.shape_inv / scale**2
        for k in range(1, P.shape[0] - 1):
            d = out[k] - ob.center
            if d @ Qi @ d >= 1.0:
                continue
            t = tang[k]
            tn = np.linalg.norm(t)
            t = t / tn if tn > 1e-12 else np.zeros(3)
            n = d - (d @ t) * t
            if np.linalg.norm(n) < 1e-6:
                n = np.array([0.0, 0.0, 1.0]) - t[2] * t
                if np.linalg.norm(n) < 1e-6:
                    n = np.array([1.0, 0.0, 0.0]) - t[0] * t
            n = n / np.linalg.norm(n)
            # smallest s >= 0 with (d + s n)^T Qi (d + s n) = 1
            a, b, c = n @ Qi @ n, 2.0 * d @ Qi @ n, d @ Qi @ d - 1.0
            s = (-b + np.sqrt(b * b - 4.0 * a * c)) / (2.0 * a)
            out[k] = out[k] + s * n
            moved = True
    if not moved:
        return None
    if ground is not None:
        out[:, 2] = np.maximum(out[:, 2], ground + 1e-2)
    return out


def _verify_translation(traj: EeTrajectory, goal: Array, ells, params: OfflineParams, oversample: int = 10) -> None:
    if np.linalg.norm(traj.p[-1] - goal) > 1e-4 or np.linalg.norm(traj.v[-1]) > 1e-4 or np.linalg.norm(traj.a[-1]) > 1e-4:
        raise PlanInfeasible("translation plan misses its terminal conditions")
    if not ells:
        return
    s = np.linspace(0.0, traj.N, traj.N * oversample + 1)
    k = np.minimum(np.floor(s).astype(int), traj.N - 1)
    u = (s - k)[:, None]
    dense = (1.0 - u) * traj.p[k] + u * traj.p[k + 1]
    for ob in ells:
        d = dense - ob.center
        h = np.einsum("ki,ij,kj->k", d, ob.shape_inv, d) - 1.0
        if np.min(h) <= 0.0:
            raise PlanInfeasible("translation plan enters an obstacle between knots")


def min_jerk_quintic(p0: ArrayLike, pg: ArrayLike, t: ArrayLike, T: float) -> Array:
    """Continuous rest-to-rest minimum-jerk position profile."""
    s = np.clip(np.asarray(t, dtype=float) / T, 0.0, 1.0)[:, None]
    p0 = np.asarray(p0, dtype=float)
    return p0 + (np.asarray(pg, dtype=float) - p0) * (10 * s**3 - 15 * s**4 + 6 * s**5)


# --------------------------------------------------------------------------
# rotation


def _rotation_rollout(R0: Array, phi: Array) -> Array:
    Rs = np.empty((phi.shape[0] + 1, 3, 3))
    Rs[0] = R0
    for k in range(phi.shape[0]):
        Rs[k + 1] = reorthonormalize(Rs[k] @ exp_so3(phi[k]))
    return Rs


def plan_ee_rotation(
    R_start: ArrayLike,
    R_goal: ArrayLike,
    params: OfflineParams | None = None,
    opts: NlpOptions | None = None,
) -> tuple[Array, Array, Array, Array, dict]:
    """Minimum angular-jerk rotation from rest to rest.

    Returns knots ``(R (N+1,3,3), w (N+1,3), dw (N+1,3), ddw (N,3), stats)``.
    """
    params = params or OfflineParams()
    R0 = np.asarray(R_start, dtype=float)
    Rg = np.asarray(R_goal, dtype=float)
    N, dt = params.N, params.dt
    maps = TripleIntegratorMaps.build(N, dt)
    W = np.asarray(params.R_w, dtype=float)
    H = 2.0 * np.kron(W, np.eye(N))

    # terminal rates: w_N = 0, dw_N = 0 (linear)
    E = np.zeros((6, 3 * N))
    for ax in range(3):
        sl = slice(ax * N, (ax + 1) * N)
        E[ax, sl] = maps.S_v[N]
        E[3 + ax, sl] = maps.S_a[N]
    Sinc = maps.S_inc  # (N, N): jerks -> per-step increment of the "angle"

    def phis(z):
        return Sinc @ z.reshape(3, N).T  # (N, 3)

    def objective(z, derivatives=True):
        f = 0.5 * z @ H @ z
        return (f, H @ z, H) if derivatives else f

    def eq(z, derivatives=True):
        phi = phis(z)
        Rs = _rotation_rollout(R0, phi)
        r = log_so3(Rg.T @ Rs[-1])
        c = np.concatenate([E @ z, r])
        if not derivatives:
            return c
        # world-frame perturbation of R_N from phi_j is R_{j+1} Jr(phi_j) dphi_j
        Jl = right_jacobian_inv(r) @ Rs[-1].T
        Jphi = np.empty((N, 3, 3))
        for j in range(N):
            Jphi[j] = Jl @ Rs[j + 1] @ right_jacobian(phi[j])
        Jr = np.zeros((3, 3 * N))
        for ax in range(3):
            # d r / d z_{ax, i} = sum_j Jphi[j][:, ax] * Sinc[j, i]
            Jr[:, ax * N : (ax + 1) * N] = np.einsum("jr,ji->ri", Jphi[:, :, ax], Sinc)
        return c, np.vstack([E, Jr])

    # single-axis geodesic initial guess: exact when the motion is about one axis
    a = log_so3(R0.T @ Rg)
    angle = float(np.linalg.norm(a))
    if angle < 1e-12:
        z0 = np.zeros(3 * N)
    else:
        axis = a / angle
        E1 = np.vstack([maps.S_x[N], maps.S_v[N], maps.S_a[N]])
        j1 = _min_norm_equality(E1, np.array([angle, 0.0, 0.0]))
        z0 = np.kron(axis, j1)
    problem = NlpProblem(3 * N, objective, z0, eq=eq)
    sol = solve(problem, opts or NlpOptions())
    if not sol.converged:
        raise PlanInfeasible(f"rotation plan failed: {sol.status.value}", solution=sol)
    z = sol.z_star
    J = z.reshape(3, N).T
    Rs = _rotation_rollout(R0, phis(z))
    w = maps.S_v @ J
    dw = maps.S_a @ J
    resid = float(np.trace(np.eye(3) - Rg.T @ Rs[-1]))
    if resid > TERMINAL_TRACE_TOL:
        raise PlanInfeasible(f"terminal orientation residual {resid:.2e} exceeds tolerance", solution=sol)
    stats = sol.stats()
    stats["terminal_trace_residual"] = resid
    return Rs, w, dw, J, stats


def plan_ee(
    start_p: ArrayLike,
    goal_p: ArrayLike,
    obstacles: ObstacleSet | None = None,
    params: OfflineParams | None = None,
    R_start: ArrayLike | None = None,
    R_goal: ArrayLike | None = None,
    ee_radius: float = 0.0,
) -> EeTrajectory:
    """Both stages; rotation is skipped when ``R_goal`` is ``None``."""
    params = params or OfflineParams()
    traj = plan_ee_translation(start_p, goal_p, obstacles, params, ee_radius)
    if R_goal is not None:
        if R_start is None:
            raise ValueError("R_start is required when an orientation goal is given")
        R, w, dw, ddw, stats = plan_ee_rotation(R_start, R_goal, params)
        traj.R, traj.w, traj.dw, traj.ddw = R, w, dw, ddw
        traj.stats["rotation"] = stats
    return traj


def dense_barrier_min(traj: EeTrajectory, obstacles: ObstacleSet, oversample: int = 10) -> float:
    """Smallest point barrier along the linearly interpolated path."""
    if not obstacles.ellipsoids:
        return math.inf
    s = np.linspace(0.0, traj.N, traj.N * oversample + 1)
    k = np.minimum(np.floor(s).astype(int), max(traj.N - 1, 0))
    u = (s - k)[:, None]
    dense = (1.0 - u) * traj.p[k] + u * traj.p[np.minimum(k + 1, traj.N)]
    out = math.inf
    for ob in obstacles.ellipsoids:
        d = dense - ob.center
        out = min(out, float(np.min(np.einsum("ki,ij,kj->k", d, ob.shape_inv, d) - 1.0)))
    return out


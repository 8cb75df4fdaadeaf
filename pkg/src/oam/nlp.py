"""Small dense constrained NLP solver.

Minimises ``f(z)`` subject to ``c(z) = 0``, ``g(z) >= 0`` and simple bounds
with an augmented Lagrangian. Inequalities enter through the PHR squared
hinge. Each inner problem is solved by damped (Gauss-)Newton steps with a
backtracking Armijo line search on the augmented Lagrangian; when the
objective supplies no Hessian a BFGS approximation is used instead.

Every callable takes ``(z, derivatives)``. With ``derivatives=True`` the
objective returns ``(f, grad, hess_or_None)`` and constraints return
``(values, jacobian)``; with ``derivatives=False`` only the value(s).
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from oam.errors import NumericalFailure

Array = NDArray[np.float64]
log = logging.getLogger(__name__)

FD_STEP = 1e-6


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITER = "MaxIter"
    INFEASIBLE = "Infeasible"
    NUMERICAL_FAILURE = "NumericalFailure"


Objective = Callable[[Array, bool], object]
Constraint = Callable[[Array, bool], object]


@dataclass
class NlpProblem:
    n: int
    objective: Objective
    x0: ArrayLike
    eq: Constraint | None = None
    ineq: Constraint | None = None
    lb: ArrayLike | None = None
    ub: ArrayLike | None = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).reshape(self.n)
        if not np.all(np.isfinite(self.x0)):
            raise ValueError("initial guess must be finite")
        self.lb = None if self.lb is None else np.broadcast_to(np.asarray(self.lb, dtype=float), (self.n,)).copy()
        self.ub = None if self.ub is None else np.broadcast_to(np.asarray(self.ub, dtype=float), (self.n,)).copy()


@dataclass
class NlpOptions:
    tol_eq: float = 1e-5
    tol_ineq: float = 1e-6
    tol_opt: float = 1e-6
    max_iter: int = 50  # outer iterations
    max_inner: int = 100
    max_inner_total: int = 2000
    rho0: float = 10.0
    rho_growth: float = 10.0
    rho_max: float = 1e10
    time_limit: float | None = None
    max_step: float | None = None  # infinity-norm cap on an inner step
    stall_tol: float = 1e-15  # inner loop stops when the merit decrease falls below this (relative)


@dataclass
class WarmStart:
    z: Array
    lam: Array | None = None
    mu: Array | None = None
    rho: float | None = None


@dataclass
class NlpSolution:
    z_star: Array
    objective_value: float
    max_eq_violation: float
    min_ineq_value: float
    iterations: int
    inner_iterations: int
    status: Status
    lam: Array = field(default_factory=lambda: np.zeros(0))
    mu: Array = field(default_factory=lambda: np.zeros(0))
    rho: float = 0.0
    wall_time: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED

    def warm_start(self) -> WarmStart:
        return WarmStart(self.z_star.copy(), self.lam.copy(), self.mu.copy(), self.rho)

    def stats(self) -> dict:
        return {
            "status": self.status.value,
            "objective": self.objective_value,
            "max_eq_violation": self.max_eq_violation,
            "min_ineq_value": self.min_ineq_value,
            "iterations": self.iterations,
            "inner_iterations": self.inner_iterations,
            "wall_time_ms": 1e3 * self.wall_time,
        }


# --------------------------------------------------------------------------
# finite-difference adapters


def fd_gradient(fun: Callable[[Array], float], z: Array, h: float = FD_STEP) -> Array:
    g = np.empty_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        g[i] = (fun(z + e) - fun(z - e)) / (2.0 * h)
    return g


def fd_jacobian(fun: Callable[[Array], Array], z: Array, h: float = FD_STEP) -> Array:
    cols = []
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        cols.append((np.asarray(fun(z + e)) - np.asarray(fun(z - e))) / (2.0 * h))
    return np.column_stack(cols) if cols else np.zeros((0, z.size))


def with_fd_objective(fun: Callable[[Array], float]) -> Objective:
    """Wrap a value-only objective with central finite differences (slow, for prototyping)."""
    log.debug("objective uses finite-difference gradients")

    def wrapped(z, derivatives=True):
        if not derivatives:
            return float(fun(z))
        return float(fun(z)), fd_gradient(fun, z), None

    return wrapped


def with_fd_constraint(fun: Callable[[Array], ArrayLike]) -> Constraint:
    log.debug("constraint uses finite-difference Jacobians")

    def wrapped(z, derivatives=True):
        v = np.atleast_1d(np.asarray(fun(z), dtype=float))
        if not derivatives:
            return v
        return v, fd_jacobian(lambda x: np.atleast_1d(np.asarray(fun(x), dtype=float)), z)

    return wrapped


def check_derivatives(problem: NlpProblem, z: ArrayLike | None = None, rtol: float = 1e-4) -> dict[str, float]:
    """Relative error of each supplied derivative against central differences."""
    z = problem.x0 if z is None else np.asarray(z, dtype=float)
    out = {}
    f, g, _ = problem.objective(z, True)
    g_fd = fd_gradient(lambda x: problem.objective(x, False), z)
    out["objective"] = float(np.linalg.norm(g - g_fd) / max(1.0, np.linalg.norm(g_fd)))
    for name in ("eq", "ineq"):
        fun = getattr(problem, name)
        if fun is None:
            continue
        _, J = fun(z, True)
        J_fd = fd_jacobian(lambda x: fun(x, False), z)
        out[name] = float(np.linalg.norm(J - J_fd) / max(1.0, np.linalg.norm(J_fd)))
    bad = {k: v for k, v in out.items() if v > rtol}
    if bad:
        log.warning("derivative check failed: %s", bad)
    return out


# --------------------------------------------------------------------------
# solver


class _Evaluator:
    """Evaluates the augmented Lagrangian for fixed multipliers."""

    def __init__(self, problem: NlpProblem):
        self.p = problem
        self.n_eq = 0 if problem.eq is None else len(np.atleast_1d(problem.eq(problem.x0, False)))
        self.n_in = 0 if problem.ineq is None else len(np.atleast_1d(problem.ineq(problem.x0, False)))
        self.lb_idx = np.zeros(0, dtype=int) if problem.lb is None else np.flatnonzero(np.isfinite(problem.lb))
        self.ub_idx = np.zeros(0, dtype=int) if problem.ub is None else np.flatnonzero(np.isfinite(problem.ub))
        self.n_box = self.lb_idx.size + self.ub_idx.size

    def values(self, z: Array) -> tuple[float, Array, Array]:
        f = float(self.p.objective(z, False))
        c = np.atleast_1d(self.p.eq(z, False)) if self.n_eq else np.zeros(0)
        g = self._ineq_values(z)
        return f, c, g

    def _ineq_values(self, z: Array) -> Array:
        parts = []
        if self.n_in:
            parts.append(np.atleast_1d(self.p.ineq(z, False)))
        if self.lb_idx.size:
            parts.append(z[self.lb_idx] - self.p.lb[self.lb_idx])
        if self.ub_idx.size:
            parts.append(self.p.ub[self.ub_idx] - z[self.ub_idx])
        return np.concatenate(parts) if parts else np.zeros(0)

    def full(self, z: Array):
        f, gf, H = self.p.objective(z, True)
        if self.n_eq:
            c, Jc = self.p.eq(z, True)
            c, Jc = np.atleast_1d(c), np.atleast_2d(Jc)
        else:
            c, Jc = np.zeros(0), np.zeros((0, z.size))
        parts, jac = [], []
        if self.n_in:
            g, Jg = self.p.ineq(z, True)
            parts.append(np.atleast_1d(g))
            jac.append(np.atleast_2d(Jg))
        if self.lb_idx.size:
            parts.append(z[self.lb_idx] - self.p.lb[self.lb_idx])
            J = np.zeros((self.lb_idx.size, z.size))
            J[np.arange(self.lb_idx.size), self.lb_idx] = 1.0
            jac.append(J)
        if self.ub_idx.size:
            parts.append(self.p.ub[self.ub_idx] - z[self.ub_idx])
            J = np.zeros((self.ub_idx.size, z.size))
            J[np.arange(self.ub_idx.size), self.ub_idx] = -1.0
            jac.append(J)
        g = np.concatenate(parts) if parts else np.zeros(0)
        Jg = np.vstack(jac) if jac else np.zeros((0, z.size))
        return float(f), np.asarray(gf, dtype=float), H, c, Jc, g, Jg


def _merit(f: float, c: Array, g: Array, lam: Array, mu: Array, rho: float) -> float:
    hinge = np.maximum(0.0, mu - rho * g)
    return f + lam @ c + 0.5 * rho * c @ c + (hinge @ hinge - mu @ mu) / (2.0 * rho)


def _violations(c: Array, g: Array) -> tuple[float, float]:
    eq = float(np.max(np.abs(c))) if c.size else 0.0
    gmin = float(np.min(g)) if g.size else math.inf
    return eq, gmin


def _finite(*arrs) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrs)


def _solve_spd(H: Array, rhs: Array, damping: float = 0.0) -> Array:
    """Cholesky solve of ``H + delta I`` with ``delta`` starting at ``damping`` and raised until positive definite."""
    n = H.shape[0]
    scale = max(1e-12, float(np.max(np.abs(np.diag(H)))) if n else 1.0)
    delta = damping
    for _ in range(30):
        try:
            L = np.linalg.cholesky(H + delta * np.eye(n))
            y = np.linalg.solve(L, rhs)
            return np.linalg.solve(L.T, y)
        except np.linalg.LinAlgError:
            delta = max(1e-10 * scale, 10.0 * delta)
    raise NumericalFailure("could not regularise the inner Hessian")


def solve(problem: NlpProblem, opts: NlpOptions | None = None, warm_start: WarmStart | None = None) -> NlpSolution:
    """Augmented-Lagrangian solve; never raises on infeasibility, reports it in ``status``."""
    opts = opts or NlpOptions()
    t0 = time.perf_counter()
    ev = _Evaluator(problem)
    n_ineq = ev.n_in + ev.n_box
    z = problem.x0.copy()
    lam = np.zeros(ev.n_eq)
    mu = np.zeros(n_ineq)
    rho = opts.rho0
    if warm_start is not None:
        z = np.asarray(warm_start.z, dtype=float).copy()
        if warm_start.lam is not None and warm_start.lam.shape == lam.shape:
            lam = warm_start.lam.copy()
        if warm_start.mu is not None and warm_start.mu.shape == mu.shape:
            mu = warm_start.mu.copy()
        if warm_start.rho is not None:
            rho = float(warm_start.rho)

    inner_total = 0
    outer = 0
    status = Status.MAX_ITER
    prev_viol = math.inf
    omega = 1e-2  # inner stationarity tolerance, tightened as we go

    def pack(status):
        f, c, g = ev.values(z)
        eq, gmin = _violations(c, g)
        return NlpSolution(
            z_star=z.copy(),
            objective_value=f,
            max_eq_violation=eq,
            min_ineq_value=gmin,
            iterations=outer,
            inner_iterations=inner_total,
            status=status,
            lam=lam.copy(),
            mu=mu.copy(),
            rho=rho,
            wall_time=time.perf_counter() - t0,
        )

    try:
        for outer in range(1, opts.max_iter + 1):
            z_before = z
            z, n_inner, grad_norm = _inner_solve(ev, z, lam, mu, rho, omega, opts)
            inner_total += n_inner
            f, c, g = ev.values(z)
            if not _finite(f, c, g):
                return pack(Status.NUMERICAL_FAILURE)
            eq_v, gmin = _violations(c, g)
            ineq_v = max(0.0, -gmin) if g.size else 0.0
            # complementarity measured on the updated multipliers
            mu_new = np.maximum(0.0, mu - rho * g)
            compl = float(np.max(np.abs(np.minimum(g, mu_new)))) if g.size else 0.0
            viol = max(eq_v, ineq_v, compl)
            feasible = eq_v <= opts.tol_eq and ineq_v <= opts.tol_ineq
            log.debug(
                "outer %d: inner=%d f=%.6g eq=%.2e ineq=%.2e compl=%.2e grad=%.2e rho=%.1e",
                outer, n_inner, f, eq_v, ineq_v, compl, grad_norm, rho,
            )
            stalled = n_inner < opts.max_inner and np.array_equal(z, z_before)
            grad_tol = opts.tol_opt * max(1.0, abs(f)) * (100.0 if stalled else 1.0)
            if feasible and compl <= max(opts.tol_ineq, 1e-6) and grad_norm <= grad_tol:
                lam = lam + rho * c
                mu = mu_new
                status = Status.CONVERGED
                break
            if viol <= 0.25 * prev_viol or feasible:
                lam = lam + rho * c
                mu = mu_new
                omega = max(opts.tol_opt, 0.1 * omega)
            else:
                rho *= opts.rho_growth
                if rho > opts.rho_max:
                    status = Status.INFEASIBLE if not feasible else Status.MAX_ITER
                    rho = opts.rho_max
                    break
            prev_viol = min(prev_viol, viol)
            if inner_total >= opts.max_inner_total:
                break
            if opts.time_limit is not None and time.perf_counter() - t0 > opts.time_limit:
                break
    except NumericalFailure:
        return pack(Status.NUMERICAL_FAILURE)
    sol = pack(status)
    if status is Status.CONVERGED and (sol.max_eq_violation > opts.tol_eq or sol.min_ineq_value < -opts.tol_ineq):
        sol.status = Status.MAX_ITER
    return sol


def _inner_solve(ev: _Evaluator, z: Array, lam: Array, mu: Array, rho: float, omega: float, opts: NlpOptions):
    """Minimise the augmented Lagrangian in ``z``; returns ``(z, iterations, final grad norm)``."""
    n = z.size
    B = None  # BFGS approximation when the objective has no Hessian
    grad_prev = None
    z_prev = None
    gnorm = math.inf
    damping = 0.0  # adaptive Levenberg term, grown when steps get cut back
    for it in range(opts.max_inner + 1):
        f, gf, Hf, c, Jc, g, Jg = ev.full(z)
        if not _finite(f, gf, c, Jc, g, Jg):
            raise NumericalFailure("non-finite objective or constraint values")
        w_eq = lam + rho * c
        hinge = np.maximum(0.0, mu - rho * g)
        grad = gf + Jc.T @ w_eq - Jg.T @ hinge
        gnorm = float(np.max(np.abs(grad))) if n else 0.0
        if gnorm <= omega * max(1.0, abs(f)) or it == opts.max_inner:
            return z, it, gnorm
        active = hinge > 0.0
        Ja = Jg[active]
        if Hf is None:
            if B is None:
                B = np.eye(n)
            elif grad_prev is not None:
                s = z - z_prev
                y = gf - grad_prev  # objective curvature only; constraint terms are added exactly
                sy = s @ y
                if sy > 1e-12 * max(1.0, s @ s):
                    Bs = B @ s
                    B = B - np.outer(Bs, Bs) / (s @ Bs) + np.outer(y, y) / sy
            Hf_use = B
        else:
            Hf_use = np.asarray(Hf, dtype=float)
        H = Hf_use + rho * (Jc.T @ Jc) + rho * (Ja.T @ Ja)
        H = 0.5 * (H + H.T)
        d = _solve_spd(H, -grad, damping)
        m0 = _merit(f, c, g, lam, mu, rho)
        slope = float(grad @ d)
        if slope >= 0.0:
            d = -grad
            slope = -float(grad @ grad)
        step = 1.0
        if opts.max_step is not None:
            dmax = float(np.max(np.abs(d))) if n else 0.0
            if dmax > opts.max_step:
                step = opts.max_step / dmax
        full_step = step
        accepted = False
        for _ in range(40):
            zt = z + step * d
            ft, ct, gt = ev.values(zt)
            if _finite(ft, ct, gt):
                mt = _merit(ft, ct, gt, lam, mu, rho)
                if mt <= m0 + 1e-4 * step * slope:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            return z, it + 1, gnorm
        diag_max = float(np.max(np.abs(np.diag(H)))) if n else 1.0
        if step < 0.25 * full_step:
            damping = max(10.0 * damping, 1e-6 * diag_max)
        elif step >= full_step:
            damping = 0.1 * damping if damping > 1e-9 * diag_max else 0.0
        z_prev, grad_prev = z, gf
        z = zt
        if step * float(np.max(np.abs(d))) <= 1e-13 * (1.0 + float(np.max(np.abs(z)))) or m0 - mt <= opts.stall_tol * (1.0 + abs(m0)):
            # no measurable progress: the merit kink or rounding floor is reached
            f, gf, Hf, c, Jc, g, Jg = ev.full(z)
            hinge = np.maximum(0.0, mu - rho * g)
            grad = gf + Jc.T @ (lam + rho * c) - Jg.T @ hinge
            return z, it + 1, float(np.max(np.abs(grad)))
    return z, opts.max_inner, gnorm

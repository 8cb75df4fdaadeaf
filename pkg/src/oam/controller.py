"""Geometric robust pose control of the floating base.

The robust-integral-of-tanh law (``grite``) and two baselines: a geometric
PID (``gpid``) and the sign-function variant (``grise``). Each law is a
nominal feedforward/PD part plus a robust integral part whose only state is
the running integral held in an error-state object.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Any, Callable, Mapping

import numpy as np
from numpy.typing import ArrayLike, NDArray

from oam.geometry import attitude_error, hat
from oam.robot_model import PlantParams
from oam.state import RigidBodyState

Array = NDArray[np.float64]

CONTROLLER_KINDS = ("grite", "gpid", "grise")
LN2 = math.log(2.0)


def _vec3(x) -> Array:
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = np.full(3, float(a))
    elif a.ndim == 2:
        a = np.diag(a).copy()
    return a.reshape(3)


@dataclass(frozen=True)
class GainSet:
    """Diagonal gains stored as length-3 vectors, plus the scalar ``rho`` terms."""

    K_tp: Array = field(default_factory=lambda: np.array([8.0, 8.0, 8.0]))
    K_td: Array = field(default_factory=lambda: np.array([5.0, 5.0, 5.0]))
    K_ti: Array = field(default_factory=lambda: np.array([2.0, 2.0, 4.0]))
    Lambda_t: Array = field(default_factory=lambda: np.array([3.0, 2.0, 2.0]))
    Gamma_t: Array = field(default_factory=lambda: np.array([2.0, 2.0, 2.0]))
    Theta_t: Array = field(default_factory=lambda: np.array([3.0, 3.0, 3.0]))
    rho_t: float = 1.0
    K_rp: Array = field(default_factory=lambda: np.array([15.0, 20.0, 10.0]))
    K_rd: Array = field(default_factory=lambda: np.array([10.0, 9.0, 5.0]))
    K_ri: Array = field(default_factory=lambda: np.array([0.08, 0.08, 0.08]))
    Lambda_r: Array = field(default_factory=lambda: np.array([8.0, 8.0, 8.0]))
    Gamma_r: Array = field(default_factory=lambda: np.array([0.2, 0.2, 0.2]))
    Theta_r: Array = field(default_factory=lambda: np.array([10.0, 10.0, 10.0]))
    rho_r: float = 0.02

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name.startswith("rho"):
                val = float(val)
                if not val > 0.0:
                    raise ValueError(f"{f.name} must be positive")
            else:
                M = np.asarray(val, dtype=float)
                if M.ndim == 2 and not np.allclose(M, np.diag(np.diag(M))):
                    raise ValueError(f"{f.name} must be diagonal")
                val = _vec3(M)
                if np.any(val <= 0.0) or not np.all(np.isfinite(val)):
                    raise ValueError(f"{f.name} must have strictly positive diagonal")
            object.__setattr__(self, f.name, val)

    def with_(self, **kw) -> "GainSet":
        return replace(self, **kw)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GainSet":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown gain names: {sorted(unknown)}")
        return cls(**dict(d))

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


@dataclass
class Setpoint:
    p_d: Array = field(default_factory=lambda: np.zeros(3))
    v_d: Array = field(default_factory=lambda: np.zeros(3))
    a_d: Array = field(default_factory=lambda: np.zeros(3))
    R_d: Array = field(default_factory=lambda: np.eye(3))
    w_d: Array = field(default_factory=lambda: np.zeros(3))
    dw_d: Array = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("p_d", "v_d", "a_d", "R_d", "w_d", "dw_d"):
            setattr(self, name, np.array(getattr(self, name), dtype=float))


@dataclass
class TranslationalErrorState:
    e_p: Array = field(default_factory=lambda: np.zeros(3))
    e_t1: Array = field(default_factory=lambda: np.zeros(3))
    e_t2: Array = field(default_factory=lambda: np.zeros(3))
    e_t1_at_start: Array | None = None
    integral_accum: Array = field(default_factory=lambda: np.zeros(3))
    last_integrand: Array | None = None

    def copy(self) -> "TranslationalErrorState":
        return TranslationalErrorState(
            self.e_p.copy(),
            self.e_t1.copy(),
            self.e_t2.copy(),
            None if self.e_t1_at_start is None else self.e_t1_at_start.copy(),
            self.integral_accum.copy(),
            None if self.last_integrand is None else self.last_integrand.copy(),
        )


@dataclass
class RotationalErrorState:
    e_R: Array = field(default_factory=lambda: np.zeros(3))
    e_omega: Array = field(default_factory=lambda: np.zeros(3))
    e_r1: Array = field(default_factory=lambda: np.zeros(3))
    e_r2: Array = field(default_factory=lambda: np.zeros(3))
    e_r1_at_start: Array | None = None
    integral_accum: Array = field(default_factory=lambda: np.zeros(3))
    last_integrand: Array | None = None

    def copy(self) -> "RotationalErrorState":
        return RotationalErrorState(
            self.e_R.copy(),
            self.e_omega.copy(),
            self.e_r1.copy(),
            self.e_r2.copy(),
            None if self.e_r1_at_start is None else self.e_r1_at_start.copy(),
            self.integral_accum.copy(),
            None if self.last_integrand is None else self.last_integrand.copy(),
        )


# --------------------------------------------------------------------------
# error variables and nominal laws


def translational_errors(state: RigidBodyState, sp: Setpoint, gains: GainSet) -> tuple[Array, Array, Array]:
    """``(e_p, de_p, e_t1)``."""
    e_p = sp.p_d - state.p
    de_p = sp.v_d - state.v
    return e_p, de_p, de_p + gains.Lambda_t * e_p


def rotational_errors(state: RigidBodyState, sp: Setpoint, gains: GainSet) -> tuple[Array, Array, Array, float]:
    """``(e_R, e_omega, e_r1, Psi)``."""
    e_R, psi = attitude_error(state.R, sp.R_d)
    e_w = state.R.T @ sp.R_d @ sp.w_d - state.w
    return e_R, e_w, e_w + gains.Lambda_r * e_R, psi


def nominal_force(state: RigidBodyState, sp: Setpoint, gains: GainSet, params: PlantParams) -> Array:
    e_p, de_p, _ = translational_errors(state, sp, gains)
    acc = params.g * np.array([0.0, 0.0, 1.0]) + gains.K_tp * e_p + gains.K_td * de_p + sp.a_d
    return params.m_bar * state.R.T @ acc


def nominal_torque(state: RigidBodyState, sp: Setpoint, gains: GainSet, params: PlantParams) -> Array:
    J = params.J_bar
    w = state.w
    Q = state.R.T @ sp.R_d
    e_R, e_w, _, _ = rotational_errors(state, sp, gains)
    W = hat(w)
    return W @ J @ w - J @ (W @ Q @ sp.w_d - Q @ sp.dw_d) + J @ (gains.K_rp * e_R) + J @ (gains.K_rd * e_w)


def sign0(x: ArrayLike) -> Array:
    """Element-wise sign with ``sign(0) == 0``."""
    return np.sign(np.asarray(x, dtype=float))


def _robust_shape(kind: str) -> Callable[[Array], Array]:
    if kind == "grite":
        return np.tanh
    if kind == "grise":
        return sign0
    raise ValueError(f"no robust integral for controller kind {kind!r}")


def _robust_update(e1: Array, err, K: Array, rho: float, Gamma: Array, Theta: Array, dt: float, shape, start_attr: str):
    """Advance the trapezoidal integral and return the robust term ``(K+rho)(e1 - e1(0)) + int``."""
    Krho = K + rho
    g = Krho * e1 + Gamma * shape(Theta * e1)
    if getattr(err, start_attr) is None:
        setattr(err, start_attr, e1.copy())
        err.integral_accum = np.zeros(3)
    else:
        err.integral_accum = err.integral_accum + 0.5 * dt * (err.last_integrand + g)
    err.last_integrand = g
    return Krho * (e1 - getattr(err, start_attr)) + err.integral_accum


def _update_e2(err, e1_name: str, e2_name: str, e1: Array, dt: float, first: bool) -> None:
    prev = getattr(err, e1_name)
    de1 = np.zeros(3) if first else (e1 - prev) / dt
    setattr(err, e2_name, de1 + e1)
    setattr(err, e1_name, e1.copy())


def grite_force(
    state: RigidBodyState,
    sp: Setpoint,
    gains: GainSet,
    params: PlantParams,
    err: TranslationalErrorState,
    dt: float,
    kind: str = "grite",
) -> tuple[Array, TranslationalErrorState]:
    """Body-frame force and the advanced error state (``err`` is updated in place)."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    e_p, _, e_t1 = translational_errors(state, sp, gains)
    first = err.e_t1_at_start is None
    _update_e2(err, "e_t1", "e_t2", e_t1, dt, first)
    err.e_p = e_p
    f_n = nominal_force(state, sp, gains, params)
    r = _robust_update(e_t1, err, gains.K_ti, gains.rho_t, gains.Gamma_t, gains.Theta_t, dt, _robust_shape(kind), "e_t1_at_start")
    return f_n + state.R.T @ r, err


def grite_torque(
    state: RigidBodyState,
    sp: Setpoint,
    gains: GainSet,
    params: PlantParams,
    err: RotationalErrorState,
    dt: float,
    kind: str = "grite",
) -> tuple[Array, RotationalErrorState]:
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    e_R, e_w, e_r1, _ = rotational_errors(state, sp, gains)
    first = err.e_r1_at_start is None
    _update_e2(err, "e_r1", "e_r2", e_r1, dt, first)
    err.e_R, err.e_omega = e_R, e_w
    tau_n = nominal_torque(state, sp, gains, params)
    r = _robust_update(e_r1, err, gains.K_ri, gains.rho_r, gains.Gamma_r, gains.Theta_r, dt, _robust_shape(kind), "e_r1_at_start")
    return tau_n + r, err


def grise_force(state, sp, gains, params, err, dt):
    return grite_force(state, sp, gains, params, err, dt, kind="grise")


def grise_torque(state, sp, gains, params, err, dt):
    return grite_torque(state, sp, gains, params, err, dt, kind="grise")


@dataclass(frozen=True)
class AntiWindup:
    force: float | None = None  # defaults to 2 * m_bar * g
    torque: float = 1.0


def _clamped_trapezoid(err, integrand: Array, gain: Array, limit: float, dt: float) -> Array:
    if err.last_integrand is None:
        acc = np.zeros(3)
    else:
        acc = err.integral_accum + 0.5 * dt * (err.last_integrand + integrand)
    bound = limit / gain
    err.integral_accum = np.clip(acc, -bound, bound)
    err.last_integrand = integrand
    return gain * err.integral_accum


def gpid_force(state, sp, gains, params, err: TranslationalErrorState, dt, anti_windup: AntiWindup = AntiWindup()):
    """Nominal force plus ``R^T K_ti int(e_p)`` with a clamped accumulator."""
    e_p, _, e_t1 = translational_errors(state, sp, gains)
    first = err.last_integrand is None
    _update_e2(err, "e_t1", "e_t2", e_t1, dt, first)
    err.e_p = e_p
    if err.e_t1_at_start is None:
        err.e_t1_at_start = e_t1.copy()
    limit = anti_windup.force if anti_windup.force is not None else 2.0 * params.m_bar * params.g
    i_term = _clamped_trapezoid(err, e_p, gains.K_ti, limit, dt)
    return nominal_force(state, sp, gains, params) + state.R.T @ i_term, err


def gpid_torque(state, sp, gains, params, err: RotationalErrorState, dt, anti_windup: AntiWindup = AntiWindup()):
    """Nominal torque plus ``K_ri int(e_R)`` with a clamped accumulator."""
    e_R, e_w, e_r1, _ = rotational_errors(state, sp, gains)
    first = err.last_integrand is None
    _update_e2(err, "e_r1", "e_r2", e_r1, dt, first)
    err.e_R, err.e_omega = e_R, e_w
    if err.e_r1_at_start is None:
        err.e_r1_at_start = e_r1.copy()
    i_term = _clamped_trapezoid(err, e_R, gains.K_ri, anti_windup.torque, dt)
    return nominal_torque(state, sp, gains, params) + i_term, err


class PoseController:
    """Stateful wrapper holding both error states for one vehicle."""

    def __init__(self, gains: GainSet, params: PlantParams, kind: str = "grite", dt: float = 0.002):
        if kind not in CONTROLLER_KINDS:
            raise ValueError(f"controller kind must be one of {CONTROLLER_KINDS}")
        self.gains = gains
        self.params = params
        self.kind = kind
        self.dt = dt
        self.reset()

    def reset(self) -> None:
        self.trans = TranslationalErrorState()
        self.rot = RotationalErrorState()

    def __call__(self, state: RigidBodyState, sp: Setpoint) -> tuple[Array, Array]:
        if self.kind == "gpid":
            f, _ = gpid_force(state, sp, self.gains, self.params, self.trans, self.dt)
            tau, _ = gpid_torque(state, sp, self.gains, self.params, self.rot, self.dt)
        else:
            f, _ = grite_force(state, sp, self.gains, self.params, self.trans, self.dt, self.kind)
            tau, _ = grite_torque(state, sp, self.gains, self.params, self.rot, self.dt, self.kind)
        return f, tau

    def snapshot(self) -> tuple[TranslationalErrorState, RotationalErrorState]:
        return self.trans.copy(), self.rot.copy()


# --------------------------------------------------------------------------
# Lyapunov quantities


def log_cosh(x: ArrayLike) -> Array:
    """Overflow-safe ``ln(cosh(x))``."""
    a = np.abs(np.asarray(x, dtype=float))
    return a + np.log1p(np.exp(-2.0 * a)) - LN2


def q_term(e1: ArrayLike, Gamma: ArrayLike, Theta: ArrayLike, N_d: ArrayLike) -> float:
    """``sum Gamma/Theta ln cosh(Theta e) - e N + Gamma/Theta ln 2``."""
    e1 = np.asarray(e1, dtype=float)
    G = np.asarray(Gamma, dtype=float)
    T = np.asarray(Theta, dtype=float)
    return float(np.sum(G / T * log_cosh(T * e1) - e1 * np.asarray(N_d, dtype=float) + G / T * LN2))


def lyapunov_translational(
    e_p: ArrayLike, e_t1: ArrayLike, e_t2: ArrayLike, m: float, gains: GainSet, N_td: ArrayLike = np.zeros(3)
) -> tuple[float, float]:
    """``(V_t, Q_t)``; ``m`` is the true mass and ``N_td`` the ground-truth lumped disturbance."""
    e_p, e_t1, e_t2 = (np.asarray(a, dtype=float) for a in (e_p, e_t1, e_t2))
    Q = q_term(e_t1, gains.Gamma_t, gains.Theta_t, N_td)
    V = 0.5 * e_p @ e_p + 0.5 * e_t1 @ e_t1 + 0.5 * m * e_t2 @ e_t2 + Q
    return float(V), Q


def lyapunov_rotational(
    e_r1: ArrayLike, e_r2: ArrayLike, R: ArrayLike, R_d: ArrayLike, J_b: ArrayLike, gains: GainSet, N_rd: ArrayLike = np.zeros(3)
) -> tuple[float, float]:
    """``(V_r, Psi)`` with the true inertia ``J_b``."""
    e_r1, e_r2 = np.asarray(e_r1, dtype=float), np.asarray(e_r2, dtype=float)
    _, psi = attitude_error(R, R_d)
    Q = q_term(e_r1, gains.Gamma_r, gains.Theta_r, N_rd)
    V = 0.5 * e_r1 @ e_r1 + 0.5 * e_r2 @ np.asarray(J_b, dtype=float) @ e_r2 + Q + psi
    return float(V), psi


def q_bounds(e1: ArrayLike, Gamma: ArrayLike, Theta: ArrayLike, N_inf: ArrayLike) -> tuple[float, float]:
    """Lower/upper sandwich on the ``Q`` term given per-axis sup-norms of ``N``."""
    a = np.abs(np.asarray(e1, dtype=float))
    G = np.asarray(Gamma, dtype=float)
    N = np.asarray(N_inf, dtype=float)
    lo = float(np.sum((G - N) * a))
    hi = float(np.sum((G + N) * a + G / np.asarray(Theta, dtype=float) * LN2))
    return lo, hi


def tanh_gap(x: ArrayLike) -> Array:
    """``|x| - x tanh(x)``, bounded above by about 0.2785."""
    x = np.asarray(x, dtype=float)
    return np.abs(x) - x * np.tanh(x)


def gain_conditions(
    gains: GainSet, N_d: ArrayLike, dN_d: ArrayLike, channel: str = "t"
) -> dict[str, bool]:
    """Check the robust-gain premises against sampled disturbance histories.

    ``N_d``/``dN_d`` are ``(T, 3)`` samples of the lumped disturbance and
    its derivative; only a scripted (simulated) disturbance makes this
    checkable.
    """
    N_inf = np.max(np.abs(np.asarray(N_d, dtype=float)), axis=0)
    dN_inf = np.max(np.abs(np.asarray(dN_d, dtype=float)), axis=0)
    if channel == "t":
        Gamma, Lam, rho = gains.Gamma_t, gains.Lambda_t, gains.rho_t
    else:
        Gamma, Lam, rho = gains.Gamma_r, gains.Lambda_r, gains.rho_r
    return {
        "gamma_dominates": bool(np.all(Gamma >= N_inf + dN_inf)),
        "lambda_at_least_half": bool(np.min(Lam) >= 0.5),
        "eta_star_positive": min(np.min(Lam) - 0.5, 0.5, rho) > 0.0,
    }

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import seeds
from oam.controller import (
    AntiWindup,
    GainSet,
    PoseController,
    RotationalErrorState,
    Setpoint,
    TranslationalErrorState,
    gain_conditions,
    gpid_force,
    gpid_torque,
    grise_force,
    grite_force,
    grite_torque,
    log_cosh,
    lyapunov_rotational,
    lyapunov_translational,
    nominal_force,
    q_bounds,
    q_term,
    tanh_gap,
)
from oam.geometry import random_rotation, rot_z
from oam.robot_model import PlantParams
from oam.state import RigidBodyState

G = GainSet()
P = PlantParams()
DT = 0.002


def test_hover_at_setpoint_needs_only_weight():
    state = RigidBodyState(p=[1.0, 2.0, 3.0])
    sp = Setpoint(p_d=[1.0, 2.0, 3.0])
    for kind in ("grite", "gpid", "grise"):
        ctrl = PoseController(G, P, kind, DT)
        for _ in range(5):
            f, tau = ctrl(state, sp)
        np.testing.assert_allclose(f, [0.0, 0.0, P.m_bar * P.g], atol=1e-12)
        np.testing.assert_allclose(tau, 0.0, atol=1e-12)


def test_nominal_force_pd_terms():
    state = RigidBodyState(v=[0.0, 0.0, -0.1])
    sp = Setpoint(p_d=[0.1, 0.0, 0.0])
    f = nominal_force(state, sp, G, P)
    expected = P.m_bar * np.array([G.K_tp[0] * 0.1, 0.0, P.g + G.K_td[2] * 0.1])
    np.testing.assert_allclose(f, expected)


def test_nominal_force_is_rotated_into_body():
    R = rot_z(0.7)
    sp = Setpoint(p_d=[0.1, 0.0, 0.0])
    f_world = nominal_force(RigidBodyState(), sp, G, P)
    f_body = nominal_force(RigidBodyState(R=R), sp, G, P)
    np.testing.assert_allclose(R @ f_body, f_world, atol=1e-12)


def test_robust_integral_with_constant_error():
    # constant e_t1 = Lambda_t * e_p: the (e1 - e1(0)) term vanishes, the
    # trapezoidal integral is exact for a constant integrand
    state = RigidBodyState()
    sp = Setpoint(p_d=[0.01, 0.0, 0.0])
    err = TranslationalErrorState()
    n = 50
    for _ in range(n + 1):
        f, err = grite_force(state, sp, G, P, err, DT)
    e1 = G.Lambda_t * np.array([0.01, 0.0, 0.0])
    integrand = (G.K_ti + G.rho_t) * e1 + G.Gamma_t * np.tanh(G.Theta_t * e1)
    np.testing.assert_allclose(err.integral_accum, n * DT * integrand, rtol=1e-12)
    np.testing.assert_allclose(f - nominal_force(state, sp, G, P), n * DT * integrand, rtol=1e-12)


def test_grise_uses_sign():
    state = RigidBodyState()
    sp = Setpoint(p_d=[0.01, 0.0, 0.0])
    err = TranslationalErrorState()
    for _ in range(3):
        _, err = grise_force(state, sp, G, P, err, DT)
    e1 = G.Lambda_t[0] * 0.01
    expected = 2 * DT * ((G.K_ti[0] + G.rho_t) * e1 + G.Gamma_t[0])
    assert err.integral_accum[0] == pytest.approx(expected)
    assert err.integral_accum[1] == 0.0


def test_gpid_integral_is_clamped():
    state = RigidBodyState()
    sp = Setpoint(p_d=[10.0, 0.0, 0.0])
    err = TranslationalErrorState()
    aw = AntiWindup(force=1.0)
    for _ in range(1000):
        f, err = gpid_force(state, sp, G, P, err, DT, aw)
    assert np.max(np.abs(G.K_ti * err.integral_accum)) == pytest.approx(1.0)
    rerr = RotationalErrorState()
    for _ in range(1000):
        _, rerr = gpid_torque(RigidBodyState(), Setpoint(R_d=rot_z(1.0)), G, P, rerr, DT, AntiWindup(torque=0.01))
    assert np.max(np.abs(G.K_ri * rerr.integral_accum)) == pytest.approx(0.01)


def test_torque_restores_yaw():
    err = RotationalErrorState()
    tau, _ = grite_torque(RigidBodyState(), Setpoint(R_d=rot_z(0.1)), G, P, err, DT)
    assert tau[2] > 0.0 and abs(tau[0]) < 1e-12 and abs(tau[1]) < 1e-12


def test_gain_validation():
    with pytest.raises(ValueError):
        GainSet(K_tp=np.array([1.0, 0.0, 1.0]))
    with pytest.raises(ValueError):
        GainSet(rho_t=0.0)
    with pytest.raises(ValueError):
        GainSet.from_dict({"K_bogus": 1.0})
    g = GainSet.from_dict({"Theta_t": np.diag([1.0, 2.0, 3.0])})
    np.testing.assert_array_equal(g.Theta_t, [1.0, 2.0, 3.0])
    assert GainSet.from_dict(G.to_dict()).to_dict() == G.to_dict()


def test_controller_kind_validated():
    with pytest.raises(ValueError):
        PoseController(G, P, "lqr")
    with pytest.raises(ValueError):
        grite_force(RigidBodyState(), Setpoint(), G, P, TranslationalErrorState(), 0.0)


def test_tanh_gap_bound_on_grid():
    x = np.linspace(-10.0, 10.0, 2_000_001)
    gap = tanh_gap(x)
    assert gap.max() <= 0.2785
    assert gap.max() > 0.278
    assert gap.min() >= 0.0


def test_log_cosh_is_overflow_safe():
    x = np.array([-3.0, 0.0, 0.5, 4.0])
    np.testing.assert_allclose(log_cosh(x), np.log(np.cosh(x)), atol=1e-14)
    assert log_cosh(1000.0) == pytest.approx(1000.0 - math.log(2.0))


@given(st.floats(-1e3, 1e3))
def test_tanh_gap_nonnegative_and_bounded(x):
    g = float(tanh_gap(x))
    assert -1e-12 <= g <= 0.2785


@given(seeds)
def test_q_term_sandwich(seed):
    rng = np.random.default_rng(seed)
    e1 = rng.normal(size=3)
    Gamma = rng.uniform(0.1, 3.0, size=3)
    Theta = rng.uniform(0.5, 20.0, size=3)
    N_inf = rng.uniform(0.0, 1.0, size=3) * Gamma
    N = rng.uniform(-1.0, 1.0, size=3) * N_inf
    lo, hi = q_bounds(e1, Gamma, Theta, N_inf)
    Q = q_term(e1, Gamma, Theta, N)
    assert lo - 1e-12 <= Q <= hi + 1e-12
    assert Q >= 0.0


@given(seeds)
def test_lyapunov_functions_nonnegative(seed):
    rng = np.random.default_rng(seed)
    V_t, _ = lyapunov_translational(rng.normal(size=3), rng.normal(size=3), rng.normal(size=3), P.m, G)
    R, Rd = random_rotation(rng), random_rotation(rng)
    V_r, psi = lyapunov_rotational(rng.normal(size=3), rng.normal(size=3), R, Rd, P.J_b, G)
    assert V_t >= 0.0 and V_r >= psi >= 0.0


def test_lyapunov_zero_at_rest():
    V_t, _ = lyapunov_translational(np.zeros(3), np.zeros(3), np.zeros(3), P.m, G)
    assert V_t == pytest.approx(float(np.sum(G.Gamma_t / G.Theta_t)) * math.log(2.0))


def test_gain_conditions():
    N = np.full((10, 3), 0.5)
    ok = gain_conditions(G, N, np.zeros((10, 3)), "t")
    assert all(ok.values())
    bad = gain_conditions(G, 10 * N, np.zeros((10, 3)), "t")
    assert not bad["gamma_dominates"]

"""Closed-loop scenario execution and run artefacts.

The plant is stepped at ``sim.dt``, the pose controller and allocation at
``sim.control_dt`` and the NMPC synchronously every ``sim.nmpc_dt`` of
simulated time, so runs are deterministic. Plans older than
``stale_intervals`` replanning periods are replaced by a hover-hold plan.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from oam.collision import ObstacleSet
from oam.config import RunConfig, load_config
from oam.controller import PoseController, Setpoint, lyapunov_rotational, lyapunov_translational
from oam.errors import NonFiniteState, NumericalFailure, PlanInfeasible, RunFailed, StalePlan
from oam.geometry import exp_so3, geodesic_distance, orthonormality_error, pitch_angle, quat_from_matrix
from oam.planner_nmpc import NmpcPlanner, TrajectoryPlan, _minkowski_batch, hold_plan, plan_to_setpoints
from oam.planner_offline import EeTrajectory, plan_ee
from oam.robot_model import Allocator, WholeBodyConfig
from oam.sim.disturbance import ArmReaction, DisturbanceModel, GroundEffect, Sinusoid, Surface, arm_sweep
from oam.sim.metrics import RunMetrics, compute_metrics
from oam.sim.plant import ActuatorCommand, Plant, PlantState
from oam.sim.scenarios import Scenario, get_scenario
from oam.state import RigidBodyState

Array = NDArray[np.float64]

E3 = np.array([0.0, 0.0, 1.0])
DIVERGENCE_LIMIT = 2.0
GRASP_TIMEOUT = 20.0
# replans start from the previous reference while tracking is this tight
REANCHOR_LIMIT = 0.05

PHASES = ("hover", "approach", "dwell", "pull", "done")


@dataclass
class RunResult:
    scenario: str
    controller: str
    status: str
    metrics: RunMetrics
    telemetry: dict[str, Array]
    events: dict = field(default_factory=dict)
    solver_log: list[dict] = field(default_factory=list)
    offline_plans: list[dict] = field(default_factory=list)
    last_plan: TrajectoryPlan | None = None
    failure: str | None = None


class _Log:
    """Column-wise telemetry buffer."""

    def __init__(self):
        self.cols: dict[str, list] = {}

    def add(self, **kw) -> None:
        for k, v in kw.items():
            self.cols.setdefault(k, []).append(v)

    def arrays(self) -> dict[str, Array]:
        return {k: np.asarray(v, dtype=float) for k, v in self.cols.items()}

    def __len__(self) -> int:
        return len(self.cols.get("t", []))


def _disturbance(s: Scenario, cfg: RunConfig) -> tuple[DisturbanceModel, ArmReaction | None]:
    dp = cfg.disturbance
    arm = None
    if s.arm_reaction:
        arm = ArmReaction(cfg.model, np.asarray(dp.link_masses), dp.gripper_mass, 0.0, cfg.model.plant.g)
    force = torque = None
    if s.force_amplitude is not None:
        force = Sinusoid(np.asarray(s.force_amplitude, dtype=float), s.disturbance_period)
    elif s.arm_sweep:
        # interaction force phase-locked to the sweep
        force = Sinusoid(dp.interaction_force * np.array([1.0, 0.0, 0.5]), s.disturbance_period)
    if s.torque_amplitude is not None:
        torque = Sinusoid(np.asarray(s.torque_amplitude, dtype=float), s.disturbance_period)
    ge = None
    if s.ground_effect:
        surfaces = [Surface(s.ground_height)]
        for ob in s.obstacles:
            ax = np.sqrt(np.diag(ob.shape))  # axis-aligned surfaces
            surfaces.append(Surface(float(ob.center[2] + ax[2]), (float(ob.center[0]), float(ob.center[1])), (float(ax[0]), float(ax[1]))))
        ge = GroundEffect(tuple(surfaces), dp.ground_effect_fraction, float(cfg.model.bodies.radii[0]), cfg.model.plant.m_bar * cfg.model.plant.g)
    return DisturbanceModel(arm, force, torque, ge), arm


class _Certificate:
    """Ground-truth (uninflated) Minkowski certificates and sphere ground clearances."""

    def __init__(self, cfg: RunConfig, obstacles: ObstacleSet):
        self.model = cfg.model
        self.obstacles = obstacles
        self.shapes = np.stack(cfg.model.bodies.shapes)
        self.sqrt_tr = np.sqrt(np.einsum("bii->b", self.shapes))

    def __call__(self, body: RigidBodyState) -> float:
        fk = self.model.fk_batch(body.p, body.R, body.theta)
        centers = fk.body_centers[0]
        vals = [math.inf]
        if self.obstacles.ellipsoids:
            Rb = fk.body_R[0]
            Qw = Rb @ self.shapes @ Rb.transpose(0, 2, 1)
            for ob in self.obstacles.ellipsoids:
                h = _minkowski_batch(centers, Qw, self.sqrt_tr, ob.center, ob.shape, ob.sqrt_trace, False)
                vals.append(float(np.min(h)))
        if self.obstacles.ground_height is not None:
            vals.append(float(np.min(centers[:, 2] - self.model.bodies.radii - self.obstacles.ground_height)))
        return min(vals)


def run_scenario(
    scenario: Scenario | str,
    config: RunConfig | None = None,
    seed: int = 0,
    out_dir: str | Path | None = None,
    controller: str = "grite",
    collision_constraints: bool = True,
    raise_on_failure: bool = True,
    duration: float | None = None,
) -> RunResult:
    """Run one scenario end to end and optionally write its artefacts to ``out_dir``."""
    s = get_scenario(scenario) if isinstance(scenario, str) else scenario
    s.validate()
    cfg = config or load_config()
    model = cfg.model
    plant_params = model.plant
    sim = cfg.sim
    ev = cfg.events
    gains = cfg.gains
    rng = np.random.default_rng(seed)

    p_init = s.p0 + s.offset_p + s.jitter * rng.uniform(-1.0, 1.0, 3)
    R_init = s.R0 @ exp_so3(s.offset_rot)
    n_j = cfg.model.manipulator.n_joints
    th0, thd0 = arm_sweep(0.0, n=n_j) if s.arm_sweep else (np.asarray(s.theta0, dtype=float), np.zeros(n_j))
    body = RigidBodyState(p_init, np.zeros(3), R_init, np.zeros(3), th0, thd0)
    allocator = Allocator(model.allocation)
    F0, a0 = allocator(plant_params.m_bar * plant_params.g * (R_init.T @ E3), np.zeros(3))
    x = PlantState(body, F0, a0)
    plant = Plant(plant_params, model.allocation, sim)
    ctrl = PoseController(gains, plant_params, controller, dt=sim.control_dt)
    dist, arm = _disturbance(s, cfg)
    obstacles = ObstacleSet(s.obstacles, s.ground_height)
    cert = _Certificate(cfg, obstacles)

    n_sub = int(round(sim.control_dt / sim.dt))
    nmpc_every = int(round(sim.nmpc_dt / sim.control_dt))
    manip = s.kind == "manipulation"
    nmpc_params = replace(cfg.nmpc, collision_constraints=collision_constraints)
    planner = NmpcPlanner(model, obstacles, nmpc_params) if manip else None
    N_H = nmpc_params.N

    events: dict = {"grasp_time": None, "attach_time": None, "pull_start": None, "done_time": None, "hover_holds": 0, "plan_failures": 0}
    solver_log: list[dict] = []
    offline_plans: list[dict] = []
    tele = _Log()
    failure: tuple[str, str] | None = None

    phase = "approach" if manip else "hover"
    traj: EeTrajectory | None = None
    t_phase0 = 0.0
    goal_p = None if s.ee_goal_p is None else np.asarray(s.ee_goal_p, dtype=float)
    plan: TrajectoryPlan | None = None
    consecutive_fail = 0

    def offline(start_p, start_R, target_p, target_R, T_f):
        params = replace(cfg.offline, T_f=T_f)
        tr = plan_ee(start_p, target_p, obstacles, params, R_start=start_R if target_R is not None else None, R_goal=target_R, ee_radius=model.ee_radius)
        offline_plans.append(tr.to_dict())
        return tr

    if manip:
        ee_p0, ee_R0 = model.ee_pose(WholeBodyConfig(body.p, body.R, body.theta))
        traj = offline(ee_p0, ee_R0, goal_p, s.ee_goal_R, cfg.offline.T_f)

    t_end = s.duration if not manip else math.inf
    if duration is not None:
        t_end = duration
    max_steps = int(round((t_end if math.isfinite(t_end) else cfg.offline.T_f + GRASP_TIMEOUT + ev.grasp_dwell + ev.pull_T_f + ev.final_hold + 5.0) / sim.control_dt))

    try:
        for i in range(max_steps):
            t = i * sim.control_dt
            body = x.body
            wb = WholeBodyConfig(body.p, body.R, body.theta)

            # ---- planning
            if manip and i % nmpc_every == 0:
                pr, Rr = traj.window(t - t_phase0, N_H + 1, nmpc_params.dt)
                x0 = wb
                if plan is not None and plan.status != "Hold":
                    try:
                        sp0, th0, _ = plan_to_setpoints(plan, t)
                        if np.linalg.norm(sp0.p_d - body.p) < REANCHOR_LIMIT:
                            x0 = WholeBodyConfig(sp0.p_d, sp0.R_d, th0)
                    except StalePlan:
                        pass
                try:
                    plan = planner.solve(x0, pr, Rr, stamp=t)
                    consecutive_fail = 0
                    solver_log.append({"t": round(t, 6), **plan.stats})
                except (PlanInfeasible, NumericalFailure) as exc:
                    consecutive_fail += 1
                    events["plan_failures"] += 1
                    solver_log.append({"t": round(t, 6), "status": "Failed", "detail": str(exc)})
                    if consecutive_fail > ev.retry_budget:
                        raise RunFailed("plan infeasible", f"{consecutive_fail} consecutive failures at t={t:.2f}")

            # ---- setpoints
            if manip:
                if plan is None or t - plan.stamp > ev.stale_intervals * sim.nmpc_dt + 1e-9:
                    plan = hold_plan(wb, t, nmpc_params)
                    events["hover_holds"] += 1
                try:
                    sp, th_d, thd_d = plan_to_setpoints(plan, t)
                except StalePlan:
                    plan = hold_plan(wb, t, nmpc_params)
                    events["hover_holds"] += 1
                    sp, th_d, thd_d = plan_to_setpoints(plan, t)
            else:
                sp = Setpoint(p_d=s.p0, R_d=s.R0)
                th_d, thd_d = arm_sweep(t, n=model.manipulator.n_joints) if s.arm_sweep else (s.theta0, np.zeros(model.manipulator.n_joints))

            # ---- control and allocation
            f, tau = ctrl(body, sp)
            F_cmd, a_cmd = allocator(f, tau)
            cmd = ActuatorCommand(F_cmd, a_cmd, np.asarray(th_d, dtype=float), np.asarray(thd_d, dtype=float))

            # ---- logging (state at the start of the control period)
            wn = sim.joint_wn
            th_dd = wn * wn * (cmd.theta_d - body.theta) + 2.0 * wn * (cmd.theta_dot_d - body.theta_dot)
            d_t, d_r = dist(t, body, th_dd)
            h_min = cert(body)
            ee_p, _ = model.ee_pose(wb)
            ee_err = float(np.linalg.norm(ee_p - goal_p)) if goal_p is not None else math.nan
            tele.add(
                t=t,
                p=body.p.copy(),
                q=quat_from_matrix(body.R),
                e_p=ctrl.trans.e_p.copy(),
                d_g=geodesic_distance(body.R, sp.R_d),
                f=f,
                tau=tau,
                F=F_cmd,
                alpha=a_cmd,
                e_t1=ctrl.trans.e_t1.copy(),
                e_t2=ctrl.trans.e_t2.copy(),
                e_r1=ctrl.rot.e_r1.copy(),
                e_r2=ctrl.rot.e_r2.copy(),
                R=body.R.copy(),
                R_d=sp.R_d.copy(),
                a_d=sp.a_d.copy(),
                d_t=d_t,
                d_r=d_r,
                mass=plant.mass,
                theta=body.theta.copy(),
                ee_err=ee_err,
                h_min=h_min,
                pitch=pitch_angle(body.R),
                ortho=orthonormality_error(body.R),
                phase=PHASES.index(phase),
            )
            if h_min <= 0.0 and collision_constraints:
                raise RunFailed("collision", f"certificate {h_min:.4g} at t={t:.3f}")
            if np.linalg.norm(ctrl.trans.e_p) > DIVERGENCE_LIMIT:
                raise RunFailed("divergence", f"position error above {DIVERGENCE_LIMIT} m at t={t:.3f}")

            # ---- events
            if manip and events["attach_time"] is not None:
                load = cfg.disturbance.payload_mass * min(1.0, (t - events["attach_time"]) / max(ev.payload_ramp, 1e-9))
                plant.mass = plant_params.m + load
                if arm is not None:
                    arm.payload_mass = load
            if manip:
                if phase == "approach":
                    if ee_err < ev.grasp_tolerance:
                        phase = "dwell"
                        events["grasp_time"] = t
                    elif t > cfg.offline.T_f + GRASP_TIMEOUT:
                        raise RunFailed("timeout", f"EE never within {ev.grasp_tolerance} m of the goal")
                elif phase == "dwell" and t - events["grasp_time"] >= ev.grasp_dwell - 1e-9:
                    events["attach_time"] = t
                    ee_p_now, ee_R_now = model.ee_pose(wb)
                    traj = offline(ee_p_now, ee_R_now, goal_p + ev.pull_distance * E3, s.ee_goal_R, ev.pull_T_f)
                    t_phase0 = t
                    events["pull_start"] = t
                    phase = "pull"
                elif phase == "pull" and t - t_phase0 >= ev.pull_T_f + ev.final_hold - 1e-9:
                    phase = "done"
                    events["done_time"] = t
                    break

            # ---- plant
            for k in range(n_sub):
                if k > 0:
                    b = x.body
                    th_dd = wn * wn * (cmd.theta_d - b.theta) + 2.0 * wn * (cmd.theta_dot_d - b.theta_dot)
                    d_t, d_r = dist(t + k * sim.dt, b, th_dd)
                x = plant.step(x, cmd, d_t, d_r)
        else:
            if manip:
                raise RunFailed("timeout", "scenario did not finish")
    except RunFailed as exc:
        failure = (exc.reason, exc.detail)
    except NonFiniteState as exc:
        failure = ("divergence", str(exc))

    result = _finish(s, cfg, controller, tele, events, solver_log, offline_plans, plan, failure, phase)
    if out_dir is not None:
        write_outputs(result, out_dir)
    if failure is not None and raise_on_failure:
        raise RunFailed(failure[0], failure[1], metrics=result.metrics)
    return result


def _lyapunov(tel: dict[str, Array], cfg: RunConfig) -> tuple[Array, Array]:
    t = tel["t"]
    gains = cfg.gains
    pp = cfg.model.plant
    if t.size < 3:
        return np.zeros(t.size), np.zeros(t.size)
    jerk_d = np.gradient(tel["a_d"], t, axis=0)
    N_td = (tel["mass"] - pp.m_bar)[:, None] * jerk_d - np.gradient(tel["d_t"], t, axis=0)
    N_rd = -np.gradient(tel["d_r"], t, axis=0)
    V_t = np.array([lyapunov_translational(tel["e_p"][i], tel["e_t1"][i], tel["e_t2"][i], tel["mass"][i], gains, N_td[i])[0] for i in range(t.size)])
    V_r = np.array(
        [lyapunov_rotational(tel["e_r1"][i], tel["e_r2"][i], tel["R"][i], tel["R_d"][i], pp.J_b, gains, N_rd[i])[0] for i in range(t.size)]
    )
    return V_t, V_r


def _finish(s, cfg, controller, tele, events, solver_log, offline_plans, plan, failure, phase) -> RunResult:
    tel = tele.arrays()
    if len(tele):
        tel["V_t"], tel["V_r"] = _lyapunov(tel, cfg)
        sel = tel["t"] >= min(s.metric_start, tel["t"][-1])
        solve_ms = [r["wall_time_ms"] for r in solver_log if "wall_time_ms" in r]
        metrics = compute_metrics(
            np.linalg.norm(tel["e_p"][sel], axis=1), tel["d_g"][sel], solve_ms, float(np.min(tel["h_min"]))
        )
        events["max_abs_pitch_deg"] = float(np.degrees(np.max(np.abs(tel["pitch"]))))
        events["max_orthonormality_error"] = float(np.max(tel["ortho"]))
        events["final_phase"] = phase
    else:
        metrics = RunMetrics(*(math.nan,) * 6)
    status = "ok" if failure is None else f"failed: {failure[0]}"
    return RunResult(
        s.name,
        controller,
        status,
        metrics,
        tel,
        events,
        solver_log,
        offline_plans,
        plan,
        None if failure is None else f"{failure[0]}: {failure[1]}",
    )


TELEMETRY_COLUMNS = (
    ["t", "p_x", "p_y", "p_z", "q_w", "q_x", "q_y", "q_z", "e_p_x", "e_p_y", "e_p_z", "d_g"]
    + ["f_x", "f_y", "f_z", "tau_x", "tau_y", "tau_z"]
    + [f"F{i}" for i in range(1, 7)]
    + [f"alpha{i}" for i in range(1, 7)]
    + ["V_t", "V_r", "theta1", "theta2", "theta3", "h_min", "pitch", "phase"]
)


def write_outputs(result: RunResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tel = result.telemetry
    n = tel["t"].size if "t" in tel else 0
    with open(out / "telemetry.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TELEMETRY_COLUMNS)
        for i in range(n):
            row = [tel["t"][i], *tel["p"][i], *tel["q"][i], *tel["e_p"][i], tel["d_g"][i], *tel["f"][i], *tel["tau"][i]]
            row += [*tel["F"][i], *tel["alpha"][i], tel["V_t"][i], tel["V_r"][i], *tel["theta"][i][:3], tel["h_min"][i], tel["pitch"][i], int(tel["phase"][i])]
            w.writerow([f"{v:.9g}" for v in row])
    plan_doc = {"offline": result.offline_plans, "last_nmpc_plan": None if result.last_plan is None else result.last_plan.to_dict()}
    (out / "plan.json").write_text(json.dumps(plan_doc))
    metrics_doc = {
        "scenario": result.scenario,
        "controller": result.controller,
        "status": result.status,
        "failure": result.failure,
        "metrics": result.metrics.to_dict(),
        "events": result.events,
    }
    (out / "metrics.json").write_text(json.dumps(metrics_doc, indent=2))
    (out / "solver_log.json").write_text(json.dumps(result.solver_log))

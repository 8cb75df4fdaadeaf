"""Figures and a text summary from a run directory written by ``oam run``."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

Array = NDArray[np.float64]

FIGURES = ("tracking.png", "attitude.png", "actuators.png", "lyapunov.png", "certificate.png")


def load_telemetry(path: str | Path) -> dict[str, Array]:
    """Columns of ``telemetry.csv`` as float arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return {}
    header, body = rows[0], rows[1:]
    data = np.array(body, dtype=float).reshape(len(body), len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def load_run(run_dir: str | Path) -> tuple[dict[str, Array], dict, list]:
    d = Path(run_dir)
    tel = load_telemetry(d / "telemetry.csv")
    metrics = json.loads((d / "metrics.json").read_text())
    log_path = d / "solver_log.json"
    solver_log = json.loads(log_path.read_text()) if log_path.exists() else []
    return tel, metrics, solver_log


def summary(metrics: dict) -> str:
    m = metrics.get("metrics", {})
    ev = metrics.get("events", {})

    def fmt(v, spec=".3f"):
        return "n/a" if v is None else format(v, spec)

    lines = [
        f"scenario     {metrics.get('scenario')} ({metrics.get('controller')})",
        f"status       {metrics.get('status')}",
        f"position     rms {fmt(m.get('pos_rms_cm'))} cm  mean {fmt(m.get('pos_mean_cm'))}  std {fmt(m.get('pos_std_cm'))}",
        f"orientation  rms {fmt(m.get('ori_rms_deg'))} deg mean {fmt(m.get('ori_mean_deg'))}  std {fmt(m.get('ori_std_deg'))}",
        f"nmpc         mean {fmt(m.get('nmpc_mean_ms'), '.1f')} ms  max {fmt(m.get('nmpc_max_ms'), '.1f')} ms",
        f"certificate  min {fmt(m.get('min_certificate'), '.4g')}",
    ]
    if ev.get("grasp_time") is not None:
        lines.append(f"grasp        t={ev['grasp_time']:.2f} s  done={fmt(ev.get('done_time'), '.2f')}")
    if ev.get("max_abs_pitch_deg") is not None:
        lines.append(f"max |pitch|  {ev['max_abs_pitch_deg']:.1f} deg")
    return "\n".join(lines)


def render(run_dir: str | Path, dest: str | Path | None = None) -> list[Path]:
    """Write the standard figures for one run; returns the written paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    tel, metrics, solver_log = load_run(run_dir)
    out = Path(dest) if dest is not None else Path(run_dir)
    out.mkdir(parents=True, exist_ok=True)
    t = tel["t"]
    title = f"{metrics.get('scenario')} / {metrics.get('controller')}"
    written = []

    def save(fig, name):
        fig.suptitle(title)
        fig.tight_layout()
        path = out / name
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    fig, ax = plt.subplots(2, 1, sharex=True, figsize=(8, 6))
    for c in "xyz":
        ax[0].plot(t, 100.0 * tel[f"e_p_{c}"], label=f"e_p,{c}")
    ax[0].plot(t, 100.0 * np.sqrt(tel["e_p_x"] ** 2 + tel["e_p_y"] ** 2 + tel["e_p_z"] ** 2), "k", lw=0.8, label="|e_p|")
    ax[0].set_ylabel("position error [cm]")
    ax[0].legend(loc="upper right", fontsize=8)
    ax[1].plot(t, np.degrees(tel["d_g"]), "k")
    ax[1].set_ylabel("geodesic error [deg]")
    ax[1].set_xlabel("t [s]")
    save(fig, "tracking.png")

    fig, ax = plt.subplots(2, 1, sharex=True, figsize=(8, 6))
    for c in ("q_w", "q_x", "q_y", "q_z"):
        ax[0].plot(t, tel[c], label=c)
    ax[0].set_ylabel("quaternion")
    ax[0].legend(loc="upper right", fontsize=8)
    ax[1].plot(t, np.degrees(tel["pitch"]), label="pitch")
    for i in (1, 2, 3):
        if f"theta{i}" in tel:
            ax[1].plot(t, np.degrees(tel[f"theta{i}"]), label=f"theta{i}")
    ax[1].set_ylabel("[deg]")
    ax[1].set_xlabel("t [s]")
    ax[1].legend(loc="upper right", fontsize=8)
    save(fig, "attitude.png")

    fig, ax = plt.subplots(2, 1, sharex=True, figsize=(8, 6))
    for i in range(1, 7):
        ax[0].plot(t, tel[f"F{i}"], label=f"F{i}")
        ax[1].plot(t, np.degrees(tel[f"alpha{i}"]), label=f"alpha{i}")
    ax[0].set_ylabel("rotor thrust [N]")
    ax[1].set_ylabel("tilt angle [deg]")
    ax[1].set_xlabel("t [s]")
    ax[0].legend(loc="upper right", fontsize=7, ncol=3)
    save(fig, "actuators.png")

    fig, ax = plt.subplots(2, 1, sharex=True, figsize=(8, 6))
    ax[0].semilogy(t, np.maximum(tel["V_t"], 1e-12))
    ax[0].set_ylabel("V_t")
    ax[1].semilogy(t, np.maximum(tel["V_r"], 1e-12))
    ax[1].set_ylabel("V_r")
    ax[1].set_xlabel("t [s]")
    save(fig, "lyapunov.png")

    fig, ax = plt.subplots(2, 1, sharex=True, figsize=(8, 6))
    finite = np.isfinite(tel["h_min"])
    ax[0].plot(t[finite], tel["h_min"][finite], "k")
    ax[0].axhline(0.0, color="r", lw=0.8)
    ax[0].set_ylabel("min certificate")
    st = [r["t"] for r in solver_log if "wall_time_ms" in r]
    ms = [r["wall_time_ms"] for r in solver_log if "wall_time_ms" in r]
    if st:
        ax[1].plot(st, ms, ".", ms=3)
    ax[1].set_ylabel("NMPC solve [ms]")
    ax[1].set_xlabel("t [s]")
    save(fig, "certificate.png")

    (out / "summary.txt").write_text(summary(metrics) + "\n")
    written.append(out / "summary.txt")
    return written

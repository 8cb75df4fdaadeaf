"""Tracking, timing and safety metrics of a run."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from oam.errors import EmptyTelemetry

Array = NDArray[np.float64]


@dataclass(frozen=True)
class RunMetrics:
    pos_rms_cm: float
    pos_mean_cm: float
    pos_std_cm: float
    ori_rms_deg: float
    ori_mean_deg: float
    ori_std_deg: float
    nmpc_min_ms: float | None = None
    nmpc_max_ms: float | None = None
    nmpc_mean_ms: float | None = None
    min_certificate: float | None = None
    n_samples: int = 0

    def to_dict(self) -> dict:
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in asdict(self).items()}


def _stats(x: Array) -> tuple[float, float, float]:
    return float(np.sqrt(np.mean(x * x))), float(np.mean(x)), float(np.std(x))


def compute_metrics(
    pos_err_norm: ArrayLike,
    ori_err_rad: ArrayLike,
    solve_ms: ArrayLike | None = None,
    min_certificate: float | None = None,
) -> RunMetrics:
    """RMS, mean and std of ``||e_p||`` (cm) and the geodesic error (deg).

    Inputs are per-sample norms in metres and radians.
    """
    e = np.asarray(pos_err_norm, dtype=float).ravel()
    d = np.asarray(ori_err_rad, dtype=float).ravel()
    if e.size == 0 or d.size == 0:
        raise EmptyTelemetry("no samples in the metric window")
    p_rms, p_mean, p_std = _stats(100.0 * e)
    o_rms, o_mean, o_std = _stats(np.degrees(d))
    s_min = s_max = s_mean = None
    if solve_ms is not None and len(solve_ms) > 0:
        s = np.asarray(solve_ms, dtype=float)
        s_min, s_max, s_mean = float(s.min()), float(s.max()), float(s.mean())
    return RunMetrics(p_rms, p_mean, p_std, o_rms, o_mean, o_std, s_min, s_max, s_mean, min_certificate, int(e.size))


def steady_state_rms(t: ArrayLike, x: ArrayLike, t_start: float) -> float:
    """RMS of ``x`` over samples with ``t >= t_start``."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    sel = x[t >= t_start]
    if sel.size == 0:
        raise EmptyTelemetry("no samples after t_start")
    return float(np.sqrt(np.mean(sel * sel)))


def lyapunov_decrease_fraction(t: ArrayLike, V: ArrayLike, plateau: float, factor: float = 1.5) -> tuple[float, int]:
    """Fraction of samples with ``V > factor * plateau`` whose forward-difference derivative is ``<= 0``.

    Returns ``(fraction, count)``; the fraction is 1 when no sample qualifies.
    """
    t = np.asarray(t, dtype=float)
    V = np.asarray(V, dtype=float)
    dV = np.diff(V) / np.diff(t)
    mask = V[:-1] > factor * plateau
    n = int(mask.sum())
    if n == 0:
        return 1.0, 0
    return float(np.mean(dV[mask] <= 0.0)), n

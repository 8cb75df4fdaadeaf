"""Run configuration: robot, gains, rates, planner weights and event thresholds."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from oam.controller import GainSet
from oam.planner_nmpc import NmpcParams
from oam.planner_offline import OfflineParams
from oam.robot_model import RobotModel
from oam.sim.plant import SimParams


@dataclass(frozen=True)
class DisturbanceParams:
    link_masses: tuple[float, ...] = (0.03, 0.02, 0.02)
    gripper_mass: float = 0.02
    payload_mass: float = 0.1
    ground_effect_fraction: float = 0.15
    interaction_force: float = 0.3


@dataclass(frozen=True)
class EventParams:
    grasp_tolerance: float = 0.03
    grasp_dwell: float = 1.5
    pull_distance: float = 0.2
    pull_T_f: float = 5.0
    payload_ramp: float = 1.0
    final_hold: float = 2.0
    retry_budget: int = 10
    stale_intervals: int = 2


@dataclass
class RunConfig:
    model: RobotModel = field(default_factory=RobotModel)
    gains: GainSet = field(default_factory=GainSet)
    sim: SimParams = field(default_factory=SimParams)
    nmpc: NmpcParams = field(default_factory=NmpcParams)
    offline: OfflineParams = field(default_factory=OfflineParams)
    disturbance: DisturbanceParams = field(default_factory=DisturbanceParams)
    events: EventParams = field(default_factory=EventParams)
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunConfig":
        nm = dict(d.get("nmpc", {}))
        nmpc_kw: dict[str, Any] = {}
        for key in ("T_H", "dt", "mu_v", "margin", "inflation"):
            if key in nm:
                nmpc_kw[key] = float(nm[key])
        for key, name in (("Q_p_diag", "Q_p"), ("Q_R_diag", "Q_R"), ("R_u_diag", "R_u")):
            if key in nm:
                nmpc_kw[name] = np.diag(np.asarray(nm[key], dtype=float))
        if "u_max" in nm:
            nmpc_kw["u_max"] = np.asarray(nm["u_max"], dtype=float)
        off = dict(d.get("offline", {}))
        off_kw = {k: float(off[k]) for k in ("T_f", "dt", "gamma", "margin") if k in off}
        dist = dict(d.get("disturbance", {}))
        if "link_masses" in dist:
            dist["link_masses"] = tuple(float(x) for x in dist["link_masses"])
        return cls(
            model=RobotModel.from_dict(d.get("robot", {})),
            gains=GainSet.from_dict(d.get("gains", {})),
            sim=SimParams.from_dict(d.get("sim", {})),
            nmpc=NmpcParams(**nmpc_kw),
            offline=OfflineParams(**off_kw),
            disturbance=DisturbanceParams(**dist),
            events=EventParams(**d.get("run", {})),
            raw=copy.deepcopy(dict(d)),
        )


def default_config_dict() -> dict:
    text = resources.files("oam").joinpath("data/default_config.json").read_text()
    return json.loads(text)


def _merge(base: dict, over: Mapping[str, Any]) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Defaults, then the JSON file at ``path`` (partial files are merged), then ``overrides``."""
    d = default_config_dict()
    if path is not None:
        d = _merge(d, json.loads(Path(path).read_text()))
    if overrides:
        d = _merge(d, overrides)
    return RunConfig.from_dict(d)

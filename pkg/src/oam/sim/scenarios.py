"""Named scenarios: grasp-and-pull tasks and hover controller comparisons."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

from oam.collision import Ellipsoid
from oam.geometry import rot_y, rot_z

Array = NDArray[np.float64]

TABLE_AXES = (0.6, 0.4, 0.05)
TABLE_HEIGHT = 0.7


@dataclass(frozen=True)
class Scenario:
    """Initial state, task and disturbance script.

    ``kind`` is ``"manipulation"`` (offline plan, NMPC, grasp and pull) or
    ``"hover"`` (fixed pose setpoint with a scripted arm sweep).
    """

    name: str
    kind: str = "manipulation"
    p0: Array = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    R0: Array = field(default_factory=lambda: np.eye(3))
    theta0: Array = field(default_factory=lambda: np.zeros(3))
    ee_goal_p: Array | None = None
    ee_goal_R: Array | None = None
    obstacles: tuple[Ellipsoid, ...] = ()
    ground_height: float = 0.0
    # hover scenarios
    duration: float = 30.0
    metric_start: float = 1.0
    offset_p: Array = field(default_factory=lambda: np.zeros(3))
    offset_rot: Array = field(default_factory=lambda: np.zeros(3))
    arm_sweep: bool = False
    force_amplitude: Array | None = None
    torque_amplitude: Array | None = None
    disturbance_period: float = 10.0
    ground_effect: bool = True
    arm_reaction: bool = True
    jitter: float = 1e-3

    def with_(self, **kw) -> "Scenario":
        return replace(self, **kw)

    def validate(self) -> None:
        if self.kind not in ("manipulation", "hover"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.kind == "manipulation" and self.ee_goal_p is None:
            raise ValueError("manipulation scenarios need an EE goal")


def table(center_x: float) -> Ellipsoid:
    return Ellipsoid.from_axes([center_x, 0.0, TABLE_HEIGHT], TABLE_AXES)


def _ground(name: str, **kw) -> Scenario:
    return Scenario(name=name, ee_goal_p=np.array([0.8, 0.0, 0.10]), **kw)


def _compare(name: str, pitch_deg: float) -> Scenario:
    return Scenario(
        name=name,
        kind="hover",
        p0=np.array([0.0, 0.0, 1.5]),
        R0=rot_y(math.radians(pitch_deg)),
        duration=30.0,
        metric_start=10.0,
        offset_p=np.array([0.25, -0.15, 0.15]),
        offset_rot=np.radians([10.0, -10.0, 8.0]),
        arm_sweep=True,
        ground_effect=False,
        jitter=0.0,
    )


def _build() -> dict[str, Scenario]:
    s = {
        "ground-basic": _ground("ground-basic"),
        "ground-yaw": _ground("ground-yaw", R0=rot_z(math.pi)),
        "ground-pitch": _ground("ground-pitch", ee_goal_R=rot_y(math.pi)),
        "table-far": Scenario(
            name="table-far",
            p0=np.array([0.0, 0.0, 1.3]),
            ee_goal_p=np.array([1.2, 0.0, 0.95]),
            obstacles=(table(1.2),),
        ),
        "table-close": Scenario(
            name="table-close",
            p0=np.array([0.0, 0.0, 1.3]),
            ee_goal_p=np.array([0.75, 0.0, 0.95]),
            obstacles=(table(1.2),),
        ),
        "ctrl-compare-0": _compare("ctrl-compare-0", 0.0),
        "ctrl-compare-30": _compare("ctrl-compare-30", -30.0),
    }
    return s


SCENARIOS: dict[str, Scenario] = _build()


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None

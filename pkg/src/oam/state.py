"""Plant state shared by the controller and the simulator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from oam.errors import NonFiniteState

Array = NDArray[np.float64]


@dataclass
class RigidBodyState:
    """Base pose and twist (``w`` in the body frame) plus arm joint angles/rates."""

    p: Array = field(default_factory=lambda: np.zeros(3))
    v: Array = field(default_factory=lambda: np.zeros(3))
    R: Array = field(default_factory=lambda: np.eye(3))
    w: Array = field(default_factory=lambda: np.zeros(3))
    theta: Array = field(default_factory=lambda: np.zeros(3))
    theta_dot: Array = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("p", "v", "R", "w", "theta", "theta_dot"):
            setattr(self, name, np.array(getattr(self, name), dtype=float))

    def copy(self) -> "RigidBodyState":
        return RigidBodyState(self.p, self.v, self.R, self.w, self.theta, self.theta_dot)

    def check_finite(self) -> None:
        for name in ("p", "v", "R", "w", "theta", "theta_dot"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NonFiniteState(f"state component {name} is not finite")

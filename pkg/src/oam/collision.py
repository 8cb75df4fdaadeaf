"""Ellipsoid collision primitives.

Point barrier ``h`` and its rate form (linear class-K function), the
Minkowski-sum separation certificate between two ellipsoids, and the
sphere-over-ground clearance used for the floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

Array = NDArray[np.float64]


@dataclass(frozen=True)
class Ellipsoid:
    """``{p : (p - center)^T shape^-1 (p - center) <= 1}``."""

    center: Array
    shape: Array

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(3)
        Q = np.asarray(self.shape, dtype=float).reshape(3, 3)
        if not np.allclose(Q, Q.T, atol=1e-12, rtol=1e-9):
            raise ValueError("ellipsoid shape matrix must be symmetric")
        if np.linalg.eigvalsh(Q)[0] <= 0.0:
            raise ValueError("ellipsoid shape matrix must be positive definite")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "shape", 0.5 * (Q + Q.T))

    @classmethod
    def from_axes(cls, center: ArrayLike, semi_axes: ArrayLike, rotation: ArrayLike | None = None) -> "Ellipsoid":
        R = np.eye(3) if rotation is None else np.asarray(rotation, dtype=float)
        a = np.asarray(semi_axes, dtype=float)
        return cls(np.asarray(center, dtype=float), R @ np.diag(a * a) @ R.T)

    @classmethod
    def sphere(cls, center: ArrayLike, radius: float) -> "Ellipsoid":
        return cls(np.asarray(center, dtype=float), radius * radius * np.eye(3))

    @cached_property
    def shape_inv(self) -> Array:
        return np.linalg.inv(self.shape)

    @cached_property
    def sqrt_trace(self) -> float:
        return math.sqrt(float(np.trace(self.shape)))

    def semi_axes(self) -> tuple[Array, Array]:
        """Semi-axis lengths (ascending) and the rotation whose columns are the axes."""
        w, V = np.linalg.eigh(self.shape)
        if np.linalg.det(V) < 0.0:
            V[:, 0] = -V[:, 0]
        return np.sqrt(w), V

    def inflated(self, margin: float) -> "Ellipsoid":
        """Same orientation with every semi-axis grown by ``margin``."""
        a, V = self.semi_axes()
        return Ellipsoid.from_axes(self.center, a + margin, V)

    def transformed(self, R: ArrayLike, p: ArrayLike) -> "Ellipsoid":
        R = np.asarray(R, dtype=float)
        return Ellipsoid(R @ self.center + np.asarray(p, dtype=float), R @ self.shape @ R.T)

    def contains(self, pts: ArrayLike) -> NDArray[np.bool_]:
        d = np.atleast_2d(pts) - self.center
        return np.einsum("ni,ij,nj->n", d, self.shape_inv, d) <= 1.0


@dataclass(frozen=True)
class ObstacleSet:
    """Static obstacles as a union of ellipsoids plus a ground half-space ``z >= ground_height``."""

    ellipsoids: tuple[Ellipsoid, ...] = field(default_factory=tuple)
    ground_height: float | None = 0.0

    def __post_init__(self):
        object.__setattr__(self, "ellipsoids", tuple(self.ellipsoids))

    def inflated(self, margin: float) -> "ObstacleSet":
        return ObstacleSet(tuple(e.inflated(margin) for e in self.ellipsoids), self.ground_height)


def point_barrier(p: ArrayLike, obs: Ellipsoid) -> tuple[float, Array]:
    """``h = d^T Q^-1 d - 1`` with ``d = p - center``; positive outside."""
    d = np.asarray(p, dtype=float) - obs.center
    Qd = obs.shape_inv @ d
    return float(d @ Qd) - 1.0, 2.0 * Qd


def rate_barrier(p: ArrayLike, v: ArrayLike, obs: Ellipsoid, gamma_rate: float) -> float:
    """``grad h . v + gamma_rate * h``."""
    if gamma_rate <= 0.0:
        raise ValueError("gamma_rate must be positive")
    h, g = point_barrier(p, obs)
    return float(g @ np.asarray(v, dtype=float)) + gamma_rate * h


def rate_barrier_with_gradient(p: Array, v: Array, obs: Ellipsoid, gamma_rate: float) -> tuple[float, Array, Array]:
    """Rate barrier with its partials w.r.t. ``p`` and ``v``."""
    Qi = obs.shape_inv
    d = p - obs.center
    Qd = Qi @ d
    h = float(d @ Qd) - 1.0
    val = 2.0 * float(Qd @ v) + gamma_rate * h
    return val, 2.0 * Qi @ v + 2.0 * gamma_rate * Qd, 2.0 * Qd


def minkowski_shape(Qa: Array, Qb: Array) -> Array:
    """Trace-weighted outer ellipsoid of the Minkowski sum of two centred ellipsoids."""
    ta = math.sqrt(float(np.trace(Qa)))
    tb = math.sqrt(float(np.trace(Qb)))
    return (ta + tb) * (Qa / ta + Qb / tb)


def minkowski_separation(A: Ellipsoid, B: Ellipsoid) -> float:
    """Separation certificate; a positive value proves ``A`` and ``B`` are disjoint."""
    d = A.center - B.center
    Q = minkowski_shape(A.shape, B.shape)
    return float(d @ np.linalg.solve(Q, d)) - 1.0


def minkowski_with_gradient(
    ca: Array, Qa: Array, cb: Array, Qb: Array
) -> tuple[float, Array, Array, Array]:
    """Certificate plus its sensitivities.

    Returns ``(h, dh/dca, dh/dphi_a, dh/dphi_b)`` where ``phi`` are small
    world-frame rotations applied to each ellipsoid about its own centre
    (``Q -> exp(phi^) Q exp(phi^)^T``). ``dh/dcb == -dh/dca``.
    """
    ta = math.sqrt(float(np.trace(Qa)))
    tb = math.sqrt(float(np.trace(Qb)))
    s = ta + tb
    Q = s * (Qa / ta + Qb / tb)
    d = ca - cb
    y = np.linalg.solve(Q, d)
    h = float(d @ y) - 1.0
    # d(y^T Q y) under Q -> Q + phi^Q - Q phi^ gives -2 phi . (Q y x y)
    ga = 2.0 * (s / ta) * np.cross(y, Qa @ y)
    gb = 2.0 * (s / tb) * np.cross(y, Qb @ y)
    return h, 2.0 * y, ga, gb


def ground_clearance(x, model, ground_height: float = 0.0) -> Array:
    """Per-body ``z_i - r_i - ground`` for the bounding spheres of ``model`` at ``x``.

    ``model`` is anything with ``body_spheres(x) -> (centers (n, 3), radii (n,))``,
    normally :class:`oam.robot_model.RobotModel`.
    """
    centers, radii = model.body_spheres(x)
    return centers[:, 2] - np.asarray(radii) - ground_height


def fibonacci_sphere(n: int) -> Array:
    """``n`` nearly uniform unit vectors."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def surface_points(e: Ellipsoid, n: int = 4096) -> Array:
    a, V = e.semi_axes()
    return e.center + (fibonacci_sphere(n) * a) @ V.T


def sampled_intersection(A: Ellipsoid, B: Ellipsoid, n: int = 4096) -> bool:
    """Sampling oracle: does a surface sample of either ellipsoid fall inside the other?

    Also catches full containment through the centres. Can miss grazing
    contacts, so it only ever falsifies a separation certificate.
    """
    if A.contains(B.center)[0] or B.contains(A.center)[0]:
        return True
    return bool(B.contains(surface_points(A, n)).any() or A.contains(surface_points(B, n)).any())


def min_certificate(ellipsoids: Sequence[Ellipsoid], obstacles: ObstacleSet) -> float:
    """Smallest pairwise certificate between robot bodies and obstacle ellipsoids (``inf`` if none)."""
    vals = [minkowski_separation(a, o) for a in ellipsoids for o in obstacles.ellipsoids]
    return min(vals) if vals else math.inf

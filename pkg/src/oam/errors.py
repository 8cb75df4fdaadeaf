"""Exception types raised across the stack."""

from __future__ import annotations


class OamError(Exception):
    """Base class for all errors raised by :mod:`oam`."""


class NonSkewInput(OamError, ValueError):
    """A matrix handed to ``vee`` is not skew-symmetric."""


class SingularAllocation(OamError):
    """``A W A^T`` is too badly conditioned to invert."""


class NumericalFailure(OamError):
    """A solver or integrator produced non-finite values."""


class PlanInfeasible(OamError):
    """The planner could not find a plan satisfying its constraints."""

    def __init__(self, message: str, solution=None):
        super().__init__(message)
        self.solution = solution


class StartInCollision(OamError):
    """Planning was requested from a start that already violates a barrier."""


class StalePlan(OamError):
    """A plan was queried past the end of its horizon."""


class NonFiniteState(OamError):
    """The simulated plant state became non-finite."""


class RunFailed(OamError):
    """A scenario run was aborted; ``reason`` says why."""

    def __init__(self, reason: str, detail: str = "", metrics=None):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail
        self.metrics = metrics


class EmptyTelemetry(OamError):
    """Metrics were requested for a run that logged nothing."""

"""
Error types and small guard helpers shared across the toolkit.

Provides helper functions to reduce boilerplate for common input checks
(finite arrays, positive constants, the corridor contact regime).
"""

from typing import TypeVar

import numpy as np

T = TypeVar("T")


class SweepError(Exception):
    """Base class for every error raised by sweepctl."""


class ConfigError(SweepError):
    """Configuration file missing, unreadable or failing schema validation."""

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class PreconditionError(SweepError, ValueError):
    """An operation was called outside its documented domain."""


class OutsideProxTube(PreconditionError):
    """Point is too far from the moving set for a unique projection."""


class InfeasibleStart(PreconditionError):
    """Initial state does not lie in C + u(0)."""


class InfeasibleInit(PreconditionError):
    """Solver initial decision violates the discrete constraints."""


class NoConvergence(SweepError):
    """Active-set projection failed even after the fallback solver."""


class ProjectionFailure(SweepError):
    """Projection failed inside a simulation step."""

    def __init__(self, step: int, cause: Exception):
        self.step = step
        self.cause = cause
        super().__init__(f"projection failed at step {step}: {cause}")


class Infeasible(SweepError):
    """Vector is not in the cone generated by the active gradients."""


class VelocityProjectionFailure(SweepError):
    """Reference velocity is inconsistent with the velocity map."""


class NoMultiplier(SweepError):
    """No nonnegative multiplier represents the given normal."""


class AmbiguousMultiplier(SweepError):
    """Multiplier is not unique and cannot be enumerated."""


class EvaluationFailure(SweepError):
    """Cost evaluation left the effective domain (non-finite value)."""


class UnsupportedEndpointSet(SweepError):
    """Endpoint set has no closed-form normal cone."""


class NoContactRegime(SweepError):
    """Corridor data for which the agents never touch before the horizon."""


def require_finite(values, name: str = "value") -> np.ndarray:
    """
    Convert to a float array and raise if any entry is NaN or infinite.

    Usage:
        x0 = require_finite(x0, "x0")
    """
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise PreconditionError(f"{name} must be finite, got {arr!r}")
    return arr


def require_positive(value: float, name: str) -> float:
    """Raise if value is not a strictly positive number (inf allowed)."""
    if not (value > 0):
        raise PreconditionError(f"{name} must be positive, got {value!r}")
    return float(value)


def require_contact_regime(solution: T) -> T:
    """Raise NoContactRegime unless the closed-form solution is in contact."""
    if not getattr(solution, "contact_regime", False):
        raise NoContactRegime(
            "agents do not touch inside the horizon; closed form not applicable"
        )
    return solution

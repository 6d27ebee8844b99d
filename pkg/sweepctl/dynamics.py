"""
Perturbed sweeping dynamics.

Provides:
- PerturbationMap: f(x, a) with Jacobians and declared Lipschitz / growth constants
- ControlSignal: piecewise-linear u(.) and cellwise-constant a(.) on [0, T]
- Trajectory: output of the catching-up scheme
- catching_up_simulate, estimate_bounds, verify_feasibility
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .exceptions import (
    InfeasibleStart,
    PreconditionError,
    ProjectionFailure,
    SweepError,
    require_finite,
)
from .geometry import ConstraintSet, active_indices, cone_fit, project

logger = logging.getLogger(__name__)


# ─────────────────────────────────────────────────────────────
# Perturbation
# ─────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class PerturbationMap:
    """f(x, a) together with its partial Jacobians."""
    value: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac_x: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac_a: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lipschitz: float = 1.0
    growth: float = 1.0

    def __post_init__(self):
        if self.lipschitz < 0 or self.growth < 0:
            raise PreconditionError("lipschitz and growth constants must be nonnegative")

    @classmethod
    def affine(cls, A, B, c=None, lipschitz: float | None = None, growth: float | None = None) -> "PerturbationMap":
        """f(x, a) = A x + B a + c; the Lipschitz constant defaults to |[A B]|."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        c = np.zeros(A.shape[0]) if c is None else np.asarray(c, dtype=float)
        if B.shape[0] != A.shape[0] or c.shape != (A.shape[0],):
            raise PreconditionError("affine perturbation blocks have inconsistent shapes")
        if lipschitz is None:
            lipschitz = float(np.linalg.norm(np.hstack([A, B]), 2))
        if growth is None:
            growth = max(float(np.linalg.norm(A, 2)), float(np.linalg.norm(c)))
        return cls(
            value=lambda x, a: A @ x + B @ a + c,
            jac_x=lambda x, a: A,
            jac_a=lambda x, a: B,
            lipschitz=lipschitz,
            growth=growth,
        )

    def __call__(self, x, a) -> np.ndarray:
        return np.asarray(self.value(np.asarray(x, float), np.asarray(a, float)), dtype=float)

    def dx(self, x, a) -> np.ndarray:
        return np.atleast_2d(np.asarray(self.jac_x(np.asarray(x, float), np.asarray(a, float)), dtype=float))

    def da(self, x, a) -> np.ndarray:
        return np.atleast_2d(np.asarray(self.jac_a(np.asarray(x, float), np.asarray(a, float)), dtype=float))

    def check_jacobians(self, xs, as_, rtol: float = 1e-5) -> bool:
        """Compare both Jacobians with central differences at paired samples."""
        for x, a in zip(np.atleast_2d(xs), np.atleast_2d(as_)):
            for arg, jac in ((0, self.dx(x, a)), (1, self.da(x, a))):
                base = (x, a)[arg]
                fd = np.empty_like(jac)
                for i in range(base.size):
                    step = 1e-6 * (1.0 + abs(base[i]))
                    e = np.zeros(base.size)
                    e[i] = step
                    if arg == 0:
                        fd[:, i] = (self(x + e, a) - self(x - e, a)) / (2 * step)
                    else:
                        fd[:, i] = (self(x, a + e) - self(x, a - e)) / (2 * step)
                if np.linalg.norm(fd - jac) > rtol * max(1.0, np.linalg.norm(jac)):
                    return False
        return True

    def lipschitz_quotient(self, xs, as_) -> float:
        """Largest two-point quotient |f(z1) - f(z2)| / |z1 - z2| over the samples."""
        xs, as_ = np.atleast_2d(xs), np.atleast_2d(as_)
        worst = 0.0
        for i in range(len(xs)):
            for j in range(i + 1, len(xs)):
                dz = math.hypot(np.linalg.norm(xs[i] - xs[j]), np.linalg.norm(as_[i] - as_[j]))
                if dz > 0:
                    worst = max(worst, np.linalg.norm(self(xs[i], as_[i]) - self(xs[j], as_[j])) / dz)
        return float(worst)

    def growth_holds(self, xs, as_) -> bool:
        return all(
            np.linalg.norm(self(x, a)) <= self.growth * (1 + np.linalg.norm(x)) * (1 + 1e-6)
            for x, a in zip(np.atleast_2d(xs), np.atleast_2d(as_))
        )


# ─────────────────────────────────────────────────────────────
# Controls and trajectories
# ─────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ControlSignal:
    """
    Control pair on [0, horizon].

    u is piecewise linear through (u_times, u_values); a is constant on each
    of len(a_values) equal cells, right-open, with a(horizon) the last value.
    """
    u_times: np.ndarray
    u_values: np.ndarray
    a_values: np.ndarray
    horizon: float

    def __post_init__(self):
        times = np.asarray(self.u_times, dtype=float)
        values = np.atleast_2d(np.asarray(self.u_values, dtype=float))
        a_values = np.atleast_2d(np.asarray(self.a_values, dtype=float))
        object.__setattr__(self, "u_times", times)
        object.__setattr__(self, "u_values", values)
        object.__setattr__(self, "a_values", a_values)
        if not self.horizon > 0:
            raise PreconditionError("horizon must be positive")
        if times.size < 2 or np.any(np.diff(times) <= 0):
            raise PreconditionError("u knot times must be strictly increasing")
        if not (math.isclose(times[0], 0.0, abs_tol=1e-12) and math.isclose(times[-1], self.horizon, rel_tol=1e-12)):
            raise PreconditionError("u knots must span [0, horizon]")
        if values.shape[0] != times.size:
            raise PreconditionError("one u value per knot time is required")

    @classmethod
    def constant(cls, u, a, horizon: float, cells: int = 1) -> "ControlSignal":
        u = np.atleast_1d(np.asarray(u, dtype=float))
        a = np.atleast_1d(np.asarray(a, dtype=float))
        return cls(
            u_times=np.array([0.0, horizon]),
            u_values=np.vstack([u, u]),
            a_values=np.tile(a, (cells, 1)),
            horizon=horizon,
        )

    @classmethod
    def from_knots(cls, u_values, a_values, horizon: float) -> "ControlSignal":
        """u knots on the uniform mesh of len(u_values) - 1 cells."""
        u_values = np.atleast_2d(np.asarray(u_values, dtype=float))
        times = np.linspace(0.0, horizon, u_values.shape[0])
        return cls(u_times=times, u_values=u_values, a_values=a_values, horizon=horizon)

    @property
    def cells(self) -> int:
        return self.a_values.shape[0]

    def u(self, t: float) -> np.ndarray:
        t = min(max(t, 0.0), self.horizon)
        return np.array([np.interp(t, self.u_times, col) for col in self.u_values.T])

    def u_dot(self, t: float) -> np.ndarray:
        """Right derivative of u (left derivative at the horizon)."""
        idx = int(np.searchsorted(self.u_times, t, side="right")) - 1
        idx = min(max(idx, 0), self.u_times.size - 2)
        return (self.u_values[idx + 1] - self.u_values[idx]) / (self.u_times[idx + 1] - self.u_times[idx])

    def a(self, t: float) -> np.ndarray:
        idx = int(math.floor(t / self.horizon * self.cells + 1e-9))
        return self.a_values[min(max(idx, 0), self.cells - 1)].copy()

    def u_variation(self) -> float:
        """Exact integral of |u'| for piecewise-linear u."""
        return float(np.sum(np.linalg.norm(np.diff(self.u_values, axis=0), axis=1)))

    def with_horizon(self, horizon: float) -> "ControlSignal":
        scale = horizon / self.horizon
        return replace(self, u_times=self.u_times * scale, horizon=horizon)


@dataclass(frozen=True)
class Trajectory:
    """Catching-up output on the uniform mesh t_j = j T / k."""
    times: np.ndarray
    states: np.ndarray
    controls_u: np.ndarray
    controls_a: np.ndarray
    velocities: np.ndarray
    eta: np.ndarray
    g_values: np.ndarray
    residual: np.ndarray
    residual_explicit: np.ndarray = field(default=None)

    @property
    def k(self) -> int:
        return self.velocities.shape[0]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def h(self) -> float:
        return self.horizon / self.k

    def contact_index(self, tol: float = 1e-8) -> int | None:
        """First node at which some constraint is active."""
        hits = np.flatnonzero(np.any(np.abs(self.g_values) <= tol, axis=1))
        return int(hits[0]) if hits.size else None


def inclusion_residual(cset: ConstraintSet, drift, v, anchor, tol: float | None = None) -> float:
    """dist(v - drift; cone{grad g_i(anchor) : i active at anchor})."""
    act = list(active_indices(cset, anchor, tol).active)
    G = cset.jacobian(anchor)[act] if act else np.zeros((0, len(anchor)))
    _, rnorm = cone_fit(G, np.asarray(v, float) - np.asarray(drift, float))
    return rnorm


def catching_up_simulate(
    cset: ConstraintSet,
    f: PerturbationMap,
    ctrl: ControlSignal,
    x0,
    k: int,
    sign: int = 1,
) -> Trajectory:
    """
    Catching-up scheme x_{j+1} = proj(x_j + h sign f(x_j, a_j); C + u(t_{j+1})).

    eta_j is the projection multiplier divided by h. Two residuals are kept per
    step: `residual` against the active cone at the new point (what the scheme
    enforces) and `residual_explicit` against the cone at x_j - u(t_j).

    Raises:
        InfeasibleStart: x0 is not in C + u(0)
        ProjectionFailure: a projection step failed
    """
    if k < 1:
        raise PreconditionError("k must be at least 1")
    if sign not in (1, -1):
        raise PreconditionError("sign must be +1 or -1")
    x0 = require_finite(x0, "x0")
    if not cset.contains(x0 - ctrl.u(0.0)):
        raise InfeasibleStart(f"x0={x0} is not in C + u(0), g={cset.values(x0 - ctrl.u(0.0))}")

    T = ctrl.horizon
    h = T / k
    times = np.linspace(0.0, T, k + 1)
    n, m = x0.size, cset.m
    states = np.empty((k + 1, n))
    us = np.array([ctrl.u(t) for t in times])
    a_vals = np.array([ctrl.a(t) for t in times[:-1]])
    velocities = np.empty((k, n))
    eta = np.zeros((k, m))
    residual = np.zeros(k)
    residual_explicit = np.zeros(k)
    states[0] = x0

    for j in range(k):
        drift = sign * f(states[j], a_vals[j])
        try:
            y, lam = project(cset, states[j] + h * drift, us[j + 1])
        except SweepError as e:
            raise ProjectionFailure(j, e) from e
        states[j + 1] = y
        velocities[j] = (y - states[j]) / h
        eta[j] = lam / h
        residual[j] = inclusion_residual(cset, drift, velocities[j], y - us[j + 1])
        residual_explicit[j] = inclusion_residual(cset, drift, velocities[j], states[j] - us[j])

    g_values = np.array([cset.values(x - u) for x, u in zip(states, us)])
    logger.debug("simulated k=%d T=%.6g, min g=%.3e", k, T, g_values.min())
    return Trajectory(
        times=times,
        states=states,
        controls_u=us,
        controls_a=a_vals,
        velocities=velocities,
        eta=eta,
        g_values=g_values,
        residual=residual,
        residual_explicit=residual_explicit,
    )


# ─────────────────────────────────────────────────────────────
# A priori bounds and feasibility audit
# ─────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class SolutionBounds:
    l: float
    velocity_bound: Callable[[float], float]


def estimate_bounds(f: PerturbationMap, ctrl: ControlSignal, x0) -> SolutionBounds:
    """State bound l and velocity bound 2(1+l)M + |u'(t)|."""
    x0 = require_finite(x0, "x0")
    M, T = f.growth, ctrl.horizon
    norm_x0 = float(np.linalg.norm(x0))
    l = norm_x0 + math.exp(2 * M * T) * (2 * M * T * (1 + norm_x0) + ctrl.u_variation())
    return SolutionBounds(
        l=l,
        velocity_bound=lambda t: 2 * (1 + l) * M + float(np.linalg.norm(ctrl.u_dot(t))),
    )


@dataclass(frozen=True)
class FeasibilityCheck:
    min_value: float
    worst: tuple[int, int]
    passed: bool


def verify_feasibility(
    cset: ConstraintSet,
    ctrl: ControlSignal | None,
    traj: Trajectory,
    tol: float = 1e-9,
) -> FeasibilityCheck:
    """Minimum of g_i(x_j - u(t_j)); the trajectory's stored u is used when ctrl is None."""
    us = traj.controls_u if ctrl is None else np.array([ctrl.u(t) for t in traj.times])
    values = np.array([cset.values(x - u) for x, u in zip(traj.states, us)])
    j, i = np.unravel_index(int(np.argmin(values)), values.shape)
    min_value = float(values[j, i])
    if min_value < -tol:
        logger.warning("state constraint %d violated at node %d: g=%.3e", i, j, min_value)
    return FeasibilityCheck(min_value=min_value, worst=(int(j), int(i)), passed=min_value >= -tol)

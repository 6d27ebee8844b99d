"""
Discrete approximations of a feasible reference solution with error budgets.

A reference (x, u, a) on [0, T] is approximated on the uniform mesh
t_j = j T / k: a is sampled at left endpoints, and the state follows
x_{j+1} = x_j + h v_j with -v_j the point of F(x_j, u_j, a_j) nearest to
-x'(t_j), where F(x, u, a) = -f(x, a) - cone{grad g_i(x - u) : i active}.
The moving-set translate is coupled to the state by
u_j = x_j - x(t_j) + u(t_j), so x_j - u_j always equals x(t_j) - u(t_j).

Provides:
- ReferenceSolution (callable samplers, extended constantly past T)
- ErrorBudget and error_budget
- sample_control, project_velocity, construct_approximant, verify_uk_variation
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import quadrature
from .dynamics import PerturbationMap, Trajectory
from .exceptions import PreconditionError, VelocityProjectionFailure, require_finite
from .geometry import ConstraintSet, ControlSetU, active_indices, cone_fit

logger = logging.getLogger(__name__)

Sampler = Callable[[float], np.ndarray]


@dataclass(frozen=True)
class ReferenceSolution:
    """
    A feasible reference process on [0, horizon] given by samplers.

    Past the horizon the state is frozen at x(horizon) with zero velocity,
    u likewise, and a keeps its final value. `x_dot_left` optionally gives
    the left limit of x' where the velocity jumps.
    """
    x: Sampler
    x_dot: Sampler
    u: Sampler
    u_dot: Sampler
    a: Sampler
    horizon: float
    mu: float
    x_dot_left: Sampler | None = None

    def state(self, t: float) -> np.ndarray:
        return np.asarray(self.x(min(t, self.horizon)), dtype=float)

    def velocity(self, t: float, left: bool = False) -> np.ndarray:
        if t > self.horizon:
            return np.zeros_like(self.state(self.horizon))
        if left and self.x_dot_left is not None:
            return np.asarray(self.x_dot_left(t), dtype=float)
        return np.asarray(self.x_dot(t), dtype=float)

    def shift(self, t: float) -> np.ndarray:
        return np.asarray(self.u(min(t, self.horizon)), dtype=float)

    def shift_rate(self, t: float) -> np.ndarray:
        if t > self.horizon:
            return np.zeros_like(self.shift(self.horizon))
        return np.asarray(self.u_dot(t), dtype=float)

    def control(self, t: float) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.a(min(t, self.horizon)), dtype=float))

    @classmethod
    def from_trajectory(cls, traj: Trajectory, mu: float | None = None) -> "ReferenceSolution":
        """Piecewise-linear reference through a (fine) simulated trajectory."""
        times, states, us = traj.times, traj.states, traj.controls_u
        h, k = traj.h, traj.k

        def cell(t):
            return min(max(int(math.floor(t / h + 1e-9)), 0), k - 1)

        def left_cell(t):
            # at a node t_j > 0 the left limit lives on cell j - 1
            return min(max(int(math.ceil(t / h - 1e-9)) - 1, 0), k - 1)

        def interp(values):
            return lambda t: np.array([np.interp(t, times, col) for col in values.T])

        u_rates = np.diff(us, axis=0) / h
        if mu is None:
            mu = max(
                1.0,
                float(np.sum(np.linalg.norm(np.diff(traj.velocities, axis=0), axis=1))),
                float(np.sum(np.linalg.norm(np.diff(u_rates, axis=0), axis=1))),
                float(np.sum(np.linalg.norm(np.diff(traj.controls_a, axis=0), axis=1))),
            )
        return cls(
            x=interp(states),
            x_dot=lambda t: traj.velocities[cell(t)],
            u=interp(us),
            u_dot=lambda t: u_rates[cell(t)],
            a=lambda t: traj.controls_a[cell(t)],
            horizon=traj.horizon,
            mu=mu,
            x_dot_left=lambda t: traj.velocities[left_cell(t)],
        )

    def audit_feasibility(self, cset: ConstraintSet, k: int) -> float:
        """Minimum of g_i(x(t) - u(t)) on a grid of 10 k + 1 points."""
        grid = np.linspace(0.0, self.horizon, 10 * k + 1)
        return float(min(cset.values(self.state(t) - self.shift(t)).min() for t in grid))


@dataclass(frozen=True)
class ErrorBudget:
    delta_k: float
    mu_x_k: float
    mu_a_k: float
    mu_tilde: float
    h: float


@dataclass(frozen=True)
class RealizedErrors:
    sup_err: float
    extension_err: float
    l2_vel_err: float
    l2_ctrl_err: float
    endpoint_err: float
    var_uk: float
    first_quotient: float
    last_quotient: float
    uk_violation: float


@dataclass(frozen=True)
class DiscreteApproximant:
    times: np.ndarray
    x: np.ndarray
    u: np.ndarray
    a: np.ndarray
    v: np.ndarray
    errors: RealizedErrors | None = None
    budget: ErrorBudget | None = None

    @property
    def k(self) -> int:
        return self.a.shape[0]

    @property
    def h(self) -> float:
        return float(self.times[-1] / self.k)


@dataclass(frozen=True)
class VelocityProjection:
    velocity: np.ndarray
    multipliers: np.ndarray
    distance: float


@dataclass(frozen=True)
class UkVariationReport:
    var_uk: float
    first_quotient: float
    last_quotient: float
    bound: float
    passed: bool
    excess: float


# ─────────────────────────────────────────────────────────────
# Budgets
# ─────────────────────────────────────────────────────────────

def error_budget(ref: ReferenceSolution, f: PerturbationMap, k: int) -> ErrorBudget:
    """Closed-form bounds on the state, extension and control errors at mesh size k."""
    if k < 1:
        raise PreconditionError("k must be at least 1")
    L, mu, T = f.lipschitz, ref.mu, ref.horizon
    h = T / k
    growth = math.exp(L * T)
    mesh_term = h * mu + T * 2.0 ** (-k)
    return ErrorBudget(
        delta_k=growth * (2 * L + 1) * mesh_term,
        mu_x_k=mesh_term * (2 * L + 1) * (growth * (1 + L * h) + 1),
        mu_a_k=2 * T * mu ** 2 / k + 2.0 ** (-2 * k + 1) * T,
        mu_tilde=max(
            3 * mu + 1 + 4 * L * T * mu * growth * (2 * L + 1) + 2 * L * mu,
            2 * growth * (2 * L + 1) * (mu + 1) + mu,
        ),
        h=h,
    )


def sample_control(ref: ReferenceSolution, k: int) -> tuple[np.ndarray, float]:
    """Left-endpoint samples a_j = a(t_j) and the L2 bound on their error."""
    if k < 1:
        raise PreconditionError("k must be at least 1")
    T = ref.horizon
    a_j = np.array([ref.control(j * T / k) for j in range(k)])
    mu_a_k = 2 * T * ref.mu ** 2 / k + 2.0 ** (-2 * k + 1) * T
    return a_j, mu_a_k


def uk_variation(u: np.ndarray, h: float) -> tuple[float, float, float]:
    """(var of the discrete u-velocity, first quotient, last quotient)."""
    rates = np.diff(u, axis=0) / h
    var = float(np.sum(np.linalg.norm(np.diff(rates, axis=0), axis=1))) if len(rates) > 1 else 0.0
    return var, float(np.linalg.norm(rates[0])), float(np.linalg.norm(rates[-1]))


# ─────────────────────────────────────────────────────────────
# Construction
# ─────────────────────────────────────────────────────────────

def project_velocity(
    cset: ConstraintSet,
    f: PerturbationMap,
    x,
    u,
    a,
    w,
    tol: float | None = None,
) -> VelocityProjection:
    """
    Nearest point to w in F(x, u, a) = -f(x, a) - cone{grad g_i(x - u) : i in I(x - u)}.

    Raises:
        PreconditionError: x - u is not in C
    """
    x, u, w = require_finite(x, "x"), require_finite(u, "u"), require_finite(w, "w")
    y = x - u
    if not cset.contains(y, cset.active_tol if tol is None else tol):
        raise PreconditionError("project_velocity needs x - u in C")
    drift = f(x, a)
    act = list(active_indices(cset, y, tol).active)
    lam = np.zeros(cset.m)
    velocity = -drift
    if act:
        G = cset.jacobian(y)[act]
        coef, _ = cone_fit(G, -drift - w)
        lam[act] = coef
        velocity = -drift - G.T @ coef
    return VelocityProjection(
        velocity=velocity,
        multipliers=lam,
        distance=float(np.linalg.norm(velocity - w)),
    )


def construct_approximant(
    cset: ConstraintSet,
    f: PerturbationMap,
    ref: ReferenceSolution,
    k: int,
    controls_u: ControlSetU | None = None,
) -> DiscreteApproximant:
    """
    Build the discrete approximant of `ref` on k cells and measure its errors.

    Raises:
        VelocityProjectionFailure: -x'(t_j) is farther from F than the
            Lipschitz estimate allows, i.e. the reference is inconsistent
    """
    budget = error_budget(ref, f, k)
    if budget.delta_k >= cset.c:
        raise PreconditionError(f"k={k} too small: delta_k={budget.delta_k:.3g} >= c={cset.c:.3g}")

    T = ref.horizon
    h = T / k
    times = np.linspace(0.0, T, k + 1)
    a_j, _ = sample_control(ref, k)
    n = ref.state(0.0).size
    x = np.empty((k + 1, n))
    u = np.empty((k + 1, n))
    v = np.empty((k, n))
    x[0] = ref.state(0.0)

    for j in range(k):
        t = times[j]
        ref_x = ref.state(t)
        u[j] = x[j] - ref_x + ref.shift(t)
        target = -ref.velocity(t)
        proj = project_velocity(cset, f, x[j], u[j], a_j[j], target)
        allowed = f.lipschitz * (np.linalg.norm(x[j] - ref_x) + np.linalg.norm(a_j[j] - ref.control(t))) + 1e-6
        if proj.distance > allowed:
            raise VelocityProjectionFailure(
                f"step {j}: reference velocity is {proj.distance:.3e} from F (allowed {allowed:.3e})"
            )
        v[j] = -proj.velocity
        x[j + 1] = x[j] + h * v[j]
    u[k] = x[k] - ref.state(T) + ref.shift(T)

    errors = _realized_errors(ref, times, x, u, a_j, v, controls_u, budget)
    logger.info(
        "approximant k=%d: sup_err=%.3e (delta_k=%.3e), ext_err=%.3e (mu_x_k=%.3e)",
        k, errors.sup_err, budget.delta_k, errors.extension_err, budget.mu_x_k,
    )
    return DiscreteApproximant(times=times, x=x, u=u, a=a_j, v=v, errors=errors, budget=budget)


def _realized_errors(ref, times, x, u, a, v, controls_u, budget) -> RealizedErrors:
    k = len(a)
    h = times[-1] / k
    sup_err = max(float(np.linalg.norm(x[j] - ref.state(t))) for j, t in enumerate(times))

    extension_err = 0.0
    for j in range(k):
        for s in np.linspace(0.0, 1.0, 11)[:-1]:
            t = times[j] + s * h
            extension_err = max(extension_err, float(np.linalg.norm(x[j] + s * h * v[j] - ref.state(t))))
    extension_err = max(extension_err, float(np.linalg.norm(x[k] - ref.state(times[k]))))

    l2_vel = sum(
        quadrature.integrate_cell(lambda t, j=j: float(np.sum((v[j] - ref.velocity(t)) ** 2)), times[j], times[j + 1])
        for j in range(k)
    )
    l2_ctrl = sum(
        quadrature.integrate_cell(lambda t, j=j: float(np.sum((a[j] - ref.control(t)) ** 2)), times[j], times[j + 1])
        for j in range(k)
    )
    var_uk, first_q, last_q = uk_variation(u, h)
    slack_set = controls_u.with_slack(controls_u.lipschitz * budget.delta_k) if controls_u else None
    uk_violation = max((slack_set.violation(uj) for uj in u), default=0.0) if slack_set else 0.0
    return RealizedErrors(
        sup_err=sup_err,
        extension_err=extension_err,
        l2_vel_err=float(l2_vel),
        l2_ctrl_err=float(l2_ctrl),
        endpoint_err=float(np.linalg.norm(x[k] - ref.state(times[k]))),
        var_uk=var_uk,
        first_quotient=first_q,
        last_quotient=last_q,
        uk_violation=uk_violation,
    )


def verify_uk_variation(approx: DiscreteApproximant, budget: ErrorBudget) -> UkVariationReport:
    """The discrete u-velocity variation and both endpoint quotients must not exceed mu_tilde."""
    var_uk, first_q, last_q = uk_variation(approx.u, approx.h)
    worst = max(var_uk, first_q, last_q)
    report = UkVariationReport(
        var_uk=var_uk,
        first_quotient=first_q,
        last_quotient=last_q,
        bound=budget.mu_tilde,
        passed=worst <= budget.mu_tilde,
        excess=max(0.0, worst - budget.mu_tilde),
    )
    if not report.passed:
        logger.warning("u^k variation exceeds mu_tilde=%.4g by %.4g", budget.mu_tilde, report.excess)
    return report

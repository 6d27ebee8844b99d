"""
Discrete free-time optimal control problems on a uniform k-cell mesh.

Provides:
- SweepingOCP, Localization, DiscreteDecision
- cost_Jk: Bolza cost plus localization and u-regularity penalties
- check_constraints: tagged residuals for every discrete constraint
"""

import logging
from dataclasses import dataclass, field, fields

import numpy as np

from . import quadrature
from .approximation import ErrorBudget, ReferenceSolution, uk_variation
from .catalogue import EndpointSet, RunningCost, TerminalCost
from .dynamics import PerturbationMap, Trajectory, inclusion_residual
from .exceptions import EvaluationFailure, PreconditionError, require_finite, require_positive
from .geometry import ConstraintSet, ControlSetA, ControlSetU

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Localization:
    """Reference process and radius epsilon the discrete problem is localized around."""
    reference: ReferenceSolution
    epsilon: float

    def __post_init__(self):
        require_positive(self.epsilon, "epsilon")


@dataclass(frozen=True)
class SweepingOCP:
    geometry: ConstraintSet
    dynamics: PerturbationMap
    controls_a: ControlSetA
    terminal_cost: TerminalCost
    running_cost: RunningCost
    x0: np.ndarray
    k: int
    controls_u: ControlSetU | None = None
    u0: np.ndarray | None = None
    endpoint_x: EndpointSet = field(default_factory=EndpointSet.everywhere)
    endpoint_T: EndpointSet = field(default_factory=EndpointSet.halfline)
    localization: Localization | None = None
    budget: ErrorBudget | None = None
    horizon: float | None = None
    epsilon: float = 1.0
    sign: int = 1

    def __post_init__(self):
        object.__setattr__(self, "x0", require_finite(self.x0, "x0"))
        if self.u0 is None:
            object.__setattr__(self, "u0", np.zeros_like(self.x0))
        if self.k < 2:
            raise PreconditionError("k must be at least 2")
        require_positive(self.epsilon, "epsilon")
        if self.horizon is None and self.localization is not None:
            object.__setattr__(self, "horizon", self.localization.reference.horizon)

    @property
    def mu_tilde(self) -> float:
        return self.budget.mu_tilde if self.budget else float("inf")

    @property
    def T_max(self) -> float:
        return (self.horizon + self.epsilon) if self.horizon is not None else float("inf")

    def controls_u_k(self) -> ControlSetU | None:
        """U_k: U inflated by L_nu delta_k."""
        if self.controls_u is None:
            return None
        delta = self.budget.delta_k if self.budget else 0.0
        return self.controls_u.with_slack(self.controls_u.lipschitz * delta)


@dataclass(frozen=True)
class DiscreteDecision:
    x: np.ndarray
    u: np.ndarray
    a: np.ndarray
    T: float

    def __post_init__(self):
        x = np.atleast_2d(require_finite(self.x, "x"))
        u = np.atleast_2d(require_finite(self.u, "u"))
        a = np.atleast_2d(require_finite(self.a, "a"))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "a", a)
        require_positive(self.T, "T")
        if x.shape != u.shape or x.shape[0] != a.shape[0] + 1:
            raise PreconditionError(f"inconsistent decision shapes x{x.shape} u{u.shape} a{a.shape}")

    @classmethod
    def from_trajectory(cls, traj: Trajectory) -> "DiscreteDecision":
        return cls(x=traj.states, u=traj.controls_u, a=traj.controls_a, T=traj.horizon)

    @property
    def k(self) -> int:
        return self.a.shape[0]

    @property
    def h(self) -> float:
        return self.T / self.k

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.k + 1)

    @property
    def x_rates(self) -> np.ndarray:
        return np.diff(self.x, axis=0) / self.h

    @property
    def u_rates(self) -> np.ndarray:
        return np.diff(self.u, axis=0) / self.h


@dataclass(frozen=True)
class CostBreakdown:
    terminal: float
    running: float
    time_proximity: float = 0.0
    rate_proximity: float = 0.0
    u_start_penalty: float = 0.0
    u_variation_penalty: float = 0.0

    @property
    def total(self) -> float:
        return sum(getattr(self, f.name) for f in fields(self))


def _excess_sq(value: float, bound: float) -> float:
    return max(0.0, value - bound) ** 2


def _rate_proximity(ref: ReferenceSolution, d: DiscreteDecision) -> float:
    """sum_j int_cell |(a_j, dx_j, du_j) - (a(t), x'(t), u'(t))|^2 dt"""
    times, vx, vu = d.times, d.x_rates, d.u_rates
    total = 0.0
    for j in range(d.k):
        def integrand(t, j=j):
            return (
                float(np.sum((d.a[j] - ref.control(t)) ** 2))
                + float(np.sum((vx[j] - ref.velocity(t)) ** 2))
                + float(np.sum((vu[j] - ref.shift_rate(t)) ** 2))
            )
        total += quadrature.integrate_cell(integrand, times[j], times[j + 1])
    return total


def _state_proximity(ref: ReferenceSolution, d: DiscreteDecision) -> float:
    """sum_j int_cell |(x_j, u_j, a_j) - (x(t), u(t), a(t))|^2 dt"""
    times = d.times
    total = 0.0
    for j in range(d.k):
        def integrand(t, j=j):
            return (
                float(np.sum((d.x[j] - ref.state(t)) ** 2))
                + float(np.sum((d.u[j] - ref.shift(t)) ** 2))
                + float(np.sum((d.a[j] - ref.control(t)) ** 2))
            )
        total += quadrature.integrate_cell(integrand, times[j], times[j + 1])
    return total


def cost_Jk(
    p: SweepingOCP,
    d: DiscreteDecision,
    T_ref: float | None = None,
    mu_tilde: float | None = None,
) -> tuple[float, CostBreakdown]:
    """
    Discrete cost of a decision.

    Without a localization the time and rate proximity terms are zero; the
    u-regularity penalties use mu_tilde (the problem's budget by default,
    +inf when there is none).

    Raises:
        EvaluationFailure: the terminal or running cost is not finite
    """
    mu_tilde = p.mu_tilde if mu_tilde is None else mu_tilde
    h = d.h
    vx, vu = d.x_rates, d.u_rates
    terminal = p.terminal_cost(d.x[-1], d.T)
    running = h * sum(
        p.running_cost(t, d.x[j], d.u[j], d.a[j], vx[j], vu[j])
        for j, t in enumerate(d.times[:-1])
    )
    if not (np.isfinite(terminal) and np.isfinite(running)):
        raise EvaluationFailure(f"cost left its domain: terminal={terminal}, running={running}")

    time_prox = rate_prox = 0.0
    if p.localization is not None:
        ref = p.localization.reference
        T_ref = ref.horizon if T_ref is None else T_ref
        time_prox = 0.5 * (d.T - T_ref) ** 2
        rate_prox = 0.5 * _rate_proximity(ref, d)

    second_diff = float(np.sum(np.linalg.norm(np.diff(d.u, n=2, axis=0), axis=1))) / h
    breakdown = CostBreakdown(
        terminal=terminal,
        running=float(running),
        time_proximity=time_prox,
        rate_proximity=rate_prox,
        u_start_penalty=_excess_sq(float(np.linalg.norm(vu[0])), mu_tilde),
        u_variation_penalty=_excess_sq(second_diff, mu_tilde),
    )
    return breakdown.total, breakdown


# ─────────────────────────────────────────────────────────────
# Constraint report
# ─────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class FeasibilityReport:
    """Residual per constraint; every residual is >= 0 and 0 means satisfied."""
    residuals: dict[str, float]
    tol: float

    @property
    def passed(self) -> bool:
        return all(r <= self.tol for r in self.residuals.values())

    @property
    def failures(self) -> list[str]:
        return [name for name, r in self.residuals.items() if r > self.tol]


def check_constraints(
    p: SweepingOCP,
    d: DiscreteDecision,
    tol: float = 1e-6,
    con1_reading: str = "explicit",
) -> FeasibilityReport:
    """
    Evaluate the discrete constraints at a decision.

    `con1_reading="explicit"` measures the dynamics inclusion against the
    normal cone at x_j - u_j; "implicit" uses x_{j+1} - u_{j+1}, which is
    what the catching-up simulator enforces.
    """
    if con1_reading not in ("explicit", "implicit"):
        raise PreconditionError(f"unknown dynamics reading {con1_reading!r}")
    cset, f = p.geometry, p.dynamics
    vx = d.x_rates
    dyn = 0.0
    for j in range(d.k):
        drift = p.sign * f(d.x[j], d.a[j])
        anchor = d.x[j] - d.u[j] if con1_reading == "explicit" else d.x[j + 1] - d.u[j + 1]
        dyn = max(dyn, inclusion_residual(cset, drift, vx[j], anchor))

    g_min = min(float(cset.values(x - u).min()) for x, u in zip(d.x, d.u))
    inflation = p.budget.mu_x_k if p.budget else 0.0
    uk = p.controls_u_k()
    var_uk, first_q, last_q = uk_variation(d.u, d.h)

    residuals = {
        "dynamics": dyn,
        "moving_set": max(0.0, -g_min),
        "initial_state": float(np.linalg.norm(d.x[0] - p.x0) + np.linalg.norm(d.u[0] - p.u0)),
        "endpoint": max(
            0.0,
            p.endpoint_x.distance(d.x[-1]) - inflation,
            p.endpoint_T.distance([d.T]) - inflation,
        ),
        "horizon": max(0.0, d.T - p.T_max),
        "state_control": max((uk.violation(u) for u in d.u), default=0.0) if uk else 0.0,
        "control_a": max(p.controls_a.distance(a) for a in d.a),
        "control_regularity": max(0.0, max(first_q, last_q, var_uk) - (p.mu_tilde + 1.0)),
    }
    if p.localization is not None:
        ref, eps = p.localization.reference, p.localization.epsilon
        residuals["state_localization"] = max(0.0, _state_proximity(ref, d) - eps / 2)
        residuals["velocity_localization"] = max(0.0, _rate_velocity_only(ref, d) - eps / 2)

    report = FeasibilityReport(residuals=residuals, tol=tol)
    if not report.passed:
        logger.debug("constraint check failed: %s", report.failures)
    return report


def _rate_velocity_only(ref: ReferenceSolution, d: DiscreteDecision) -> float:
    """sum_j int_cell |(dx_j, du_j) - (x'(t), u'(t))|^2 dt"""
    times, vx, vu = d.times, d.x_rates, d.u_rates
    return sum(
        quadrature.integrate_cell(
            lambda t, j=j: float(np.sum((vx[j] - ref.velocity(t)) ** 2))
            + float(np.sum((vu[j] - ref.shift_rate(t)) ** 2)),
            times[j],
            times[j + 1],
        )
        for j in range(d.k)
    )

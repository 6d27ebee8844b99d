"""
Expression catalogue: the building blocks a run configuration can name.

Provides:
- affine, sphere_gap, quadratic: SmoothConstraint builders
- TerminalCost / RunningCost with subgradient oracles
- EndpointSet: all-space, point, box, half-line (closed-form normal cones)
- *_from_spec helpers turning validated schema blocks into objects
"""

import logging
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .config import Config
from .dynamics import PerturbationMap
from .exceptions import PreconditionError, UnsupportedEndpointSet
from .geometry import (
    ConstraintSet,
    ControlSetA,
    ControlSetU,
    SmoothConstraint,
    box_normal_distance,
)
from .schemas import (
    ConstraintSpec,
    ControlASpec,
    ControlUSpec,
    CostSpec,
    EndpointSpec,
    PerturbationSpec,
    ProblemBlock,
)

logger = logging.getLogger(__name__)


# ─────────────────────────────────────────────────────────────
# Constraint functions
# ─────────────────────────────────────────────────────────────

def affine(a, b: float = 0.0, label: str = "affine") -> SmoothConstraint:
    """g(x) = a . x + b"""
    a = np.asarray(a, dtype=float)
    zeros = np.zeros((a.size, a.size))
    return SmoothConstraint(
        value=lambda x: float(a @ x + b),
        gradient=lambda x: a,
        hessian=lambda x: zeros,
        label=label,
    )


def sphere_gap(P, q, r: float, label: str = "sphere_gap") -> SmoothConstraint:
    """g(x) = |P x - q| - r, smooth away from P x = q."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    q = np.asarray(q, dtype=float)

    def _residual(x):
        d = P @ x - q
        norm = np.linalg.norm(d)
        if norm == 0.0:
            raise PreconditionError("sphere_gap is not differentiable at its centre")
        return d, norm

    def gradient(x):
        d, norm = _residual(x)
        return P.T @ d / norm

    def hessian(x):
        d, norm = _residual(x)
        unit = d / norm
        return P.T @ (np.eye(d.size) - np.outer(unit, unit)) @ P / norm

    return SmoothConstraint(
        value=lambda x: float(np.linalg.norm(P @ x - q) - r),
        gradient=gradient,
        hessian=hessian,
        label=label,
    )


def quadratic(Q, a=None, b: float = 0.0, label: str = "quadratic") -> SmoothConstraint:
    """g(x) = x^T Q x + a . x + b"""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    a = np.zeros(Q.shape[0]) if a is None else np.asarray(a, dtype=float)
    S = Q + Q.T
    return SmoothConstraint(
        value=lambda x: float(x @ Q @ x + a @ x + b),
        gradient=lambda x: S @ x + a,
        hessian=lambda x: S,
        label=label,
    )


def constraint_from_spec(spec: ConstraintSpec, dimension: int, index: int = 0) -> SmoothConstraint:
    label = f"g{index + 1}"
    if spec.kind == "affine":
        if len(spec.a) != dimension:
            raise PreconditionError(f"{label}: a has length {len(spec.a)}, expected {dimension}")
        return affine(spec.a, spec.b, label)
    if spec.kind == "sphere_gap":
        P = np.eye(dimension) if spec.P is None else spec.P
        return sphere_gap(P, spec.q, spec.r, label)
    return quadratic(spec.Q, spec.a, spec.b, label)


def constraint_set_from_problem(problem: ProblemBlock, active_tol: float | None = None) -> ConstraintSet:
    consts = problem.constants
    return ConstraintSet(
        constraints=tuple(
            constraint_from_spec(spec, problem.dimension, i)
            for i, spec in enumerate(problem.constraints)
        ),
        M1=consts.M1,
        M2=consts.M2,
        M3=consts.M3,
        beta=consts.beta,
        rho=consts.rho,
        c=consts.c,
        active_tol=Config.ACTIVE_TOL if active_tol is None else active_tol,
    )


def perturbation_from_spec(spec: PerturbationSpec, dimension: int, control_dim: int) -> PerturbationMap:
    A = np.zeros((dimension, dimension)) if spec.A is None else spec.A
    B = np.zeros((dimension, control_dim)) if spec.B is None else spec.B
    return PerturbationMap.affine(A, B, spec.c, lipschitz=spec.lipschitz, growth=spec.growth)


def control_set_a_from_spec(spec: ControlASpec) -> ControlSetA:
    if spec.kind == "box":
        return ControlSetA.box(spec.lower, spec.upper)
    if spec.kind == "finite":
        return ControlSetA.finite(spec.points)
    return ControlSetA.free(spec.dimension)


def control_set_u_from_spec(spec: ControlUSpec, dimension: int) -> ControlSetU | None:
    if not spec.constraints:
        return None
    return ControlSetU(
        functions=tuple(
            constraint_from_spec(c, dimension, i) for i, c in enumerate(spec.constraints)
        ),
        lipschitz=spec.lipschitz,
    )


# ─────────────────────────────────────────────────────────────
# Costs
# ─────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class TerminalCost:
    """phi(x, T) with a subgradient selection oracle returning (d_x, d_T)."""
    value: Callable[[np.ndarray, float], float]
    subgradient: Callable[[np.ndarray, float], tuple[np.ndarray, float]]
    kind: str = "custom"

    def __call__(self, x, T: float) -> float:
        return float(self.value(np.asarray(x, float), float(T)))


@dataclass(frozen=True)
class RunningCost:
    """
    l(t, x, u, a, xdot, udot) and its gradient.

    The gradient oracle returns (w_x, w_u, w_a, v_x, v_u), the partial
    derivatives in x, u, a, xdot and udot.
    """
    value: Callable[..., float]
    gradient: Callable[..., tuple[np.ndarray, ...]]
    kind: str = "custom"

    def __call__(self, t, x, u, a, xdot, udot) -> float:
        return float(self.value(t, x, u, a, xdot, udot))


def zero_terminal(dimension: int) -> TerminalCost:
    return TerminalCost(
        value=lambda x, T: 0.0,
        subgradient=lambda x, T: (np.zeros(dimension), 0.0),
        kind="zero",
    )


def l1_time_cost(target, tau: float, weight: float = 1.0) -> TerminalCost:
    """phi(x, T) = weight |x - target|_1 + tau T; sign(0) = 0 is the selection at kinks."""
    target = np.asarray(target, dtype=float)
    return TerminalCost(
        value=lambda x, T: weight * float(np.sum(np.abs(x - target))) + tau * T,
        subgradient=lambda x, T: (weight * np.sign(x - target), float(tau)),
        kind="l1_time",
    )


def squared_distance_terminal(target, tau: float = 0.0, weight: float = 1.0) -> TerminalCost:
    target = np.asarray(target, dtype=float)
    return TerminalCost(
        value=lambda x, T: 0.5 * weight * float(np.sum((x - target) ** 2)) + tau * T,
        subgradient=lambda x, T: (weight * (x - target), float(tau)),
        kind="squared_distance",
    )


def zero_running(dimension: int, control_dim: int) -> RunningCost:
    def gradient(t, x, u, a, xdot, udot):
        return (np.zeros(dimension), np.zeros(dimension), np.zeros(control_dim),
                np.zeros(dimension), np.zeros(dimension))

    return RunningCost(value=lambda *args: 0.0, gradient=gradient, kind="zero")


def control_energy(dimension: int, control_dim: int, weight: float = 1.0) -> RunningCost:
    """l = weight |a|^2 / 2"""
    def gradient(t, x, u, a, xdot, udot):
        return (np.zeros(dimension), np.zeros(dimension), weight * np.asarray(a, float),
                np.zeros(dimension), np.zeros(dimension))

    return RunningCost(
        value=lambda t, x, u, a, xdot, udot: 0.5 * weight * float(np.dot(a, a)),
        gradient=gradient,
        kind="control_energy",
    )


def squared_distance_running(target, control_dim: int, weight: float = 1.0) -> RunningCost:
    target = np.asarray(target, dtype=float)
    n = target.size

    def gradient(t, x, u, a, xdot, udot):
        return (weight * (np.asarray(x, float) - target), np.zeros(n), np.zeros(control_dim),
                np.zeros(n), np.zeros(n))

    return RunningCost(
        value=lambda t, x, u, a, xdot, udot: 0.5 * weight * float(np.sum((np.asarray(x) - target) ** 2)),
        gradient=gradient,
        kind="squared_distance",
    )


def terminal_cost_from_spec(spec: CostSpec, dimension: int) -> TerminalCost:
    target = np.zeros(dimension) if spec.target is None else spec.target
    if spec.kind == "l1_time":
        return l1_time_cost(target, spec.tau, spec.weight)
    if spec.kind == "squared_distance":
        return squared_distance_terminal(target, spec.tau, spec.weight)
    if spec.kind == "control_energy":
        raise PreconditionError("control_energy is a running cost")
    return zero_terminal(dimension)


def running_cost_from_spec(spec: CostSpec, dimension: int, control_dim: int) -> RunningCost:
    if spec.kind == "control_energy":
        return control_energy(dimension, control_dim, spec.weight)
    if spec.kind == "squared_distance":
        target = np.zeros(dimension) if spec.target is None else spec.target
        return squared_distance_running(target, control_dim, spec.weight)
    if spec.kind == "l1_time":
        raise PreconditionError("l1_time is a terminal cost")
    return zero_running(dimension, control_dim)


# ─────────────────────────────────────────────────────────────
# Endpoint sets
# ─────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class EndpointSet:
    """Endpoint constraint set with a closed-form normal cone."""
    kind: Literal["all", "point", "box", "halfline", "custom"] = "all"
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    point: np.ndarray | None = None
    membership: Callable[[np.ndarray], bool] | None = None

    @classmethod
    def everywhere(cls) -> "EndpointSet":
        return cls(kind="all")

    @classmethod
    def at(cls, point) -> "EndpointSet":
        return cls(kind="point", point=np.atleast_1d(np.asarray(point, float)))

    @classmethod
    def box(cls, lower, upper) -> "EndpointSet":
        return cls(kind="box", lower=np.atleast_1d(np.asarray(lower, float)),
                   upper=np.atleast_1d(np.asarray(upper, float)))

    @classmethod
    def halfline(cls, lower: float = 0.0) -> "EndpointSet":
        return cls(kind="halfline", lower=np.array([float(lower)]), upper=np.array([np.inf]))

    def project(self, z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, float))
        if self.kind == "point":
            return self.point.copy()
        if self.kind in ("box", "halfline"):
            return np.clip(z, self.lower, self.upper)
        if self.kind == "custom":
            raise UnsupportedEndpointSet("custom endpoint sets have no projection")
        return z.copy()

    def distance(self, z) -> float:
        if self.kind == "custom":
            return 0.0 if self.membership(np.atleast_1d(z)) else float("inf")
        return float(np.linalg.norm(np.atleast_1d(z) - self.project(z)))

    def normal_distance(self, z, v, tol: float = 1e-9) -> float:
        """Distance from v to the normal cone at the projection of z."""
        v = np.atleast_1d(np.asarray(v, float))
        if self.kind == "all":
            return float(np.linalg.norm(v))
        if self.kind == "point":
            return 0.0
        if self.kind in ("box", "halfline"):
            return box_normal_distance(self.project(z), v, self.lower, self.upper, tol)
        raise UnsupportedEndpointSet(f"no closed-form normal cone for {self.kind} endpoint set")


def endpoint_from_spec(spec: EndpointSpec) -> EndpointSet:
    if spec.kind == "point":
        return EndpointSet.at(spec.point)
    if spec.kind == "box":
        return EndpointSet.box(spec.lower, spec.upper)
    if spec.kind == "halfline":
        return EndpointSet.halfline(spec.lower[0] if spec.lower else 0.0)
    return EndpointSet.everywhere()

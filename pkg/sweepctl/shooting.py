"""
Single-shooting local solver for the discrete free-time problems.

The decision variables are the control values a (optionally grouped into
piecewise-constant blocks of consecutive cells), optionally the u knots
u_1..u_k, and the horizon T. States are eliminated by the catching-up
simulator with h = T / k, so every iterate satisfies the dynamics by
construction; the box-type constraints are enforced by projection.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .dynamics import ControlSignal, catching_up_simulate
from .exceptions import (
    EvaluationFailure,
    InfeasibleInit,
    PreconditionError,
    ProjectionFailure,
)
from .ocp import DiscreteDecision, SweepingOCP, check_constraints, cost_Jk
from .workers import map_bounded

logger = logging.getLogger(__name__)

_STRUCTURAL = ("initial_state", "horizon", "control_a", "state_control", "moving_set")


@dataclass(frozen=True)
class ShootingOptions:
    control_blocks: int | None = None
    optimize_u: bool = False
    gtol: float | None = None
    max_iters: int = 500
    fd_step: float = 1e-6
    T_lower: float | None = None
    armijo_c: float = 1e-4
    max_halvings: int = 40


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    cost: float
    gnorm: float
    T: float


@dataclass(frozen=True)
class ShootingResult:
    decision: DiscreteDecision
    history: list[IterationRecord]
    status: str
    cost: float

    def __iter__(self):
        # allows `best, history = solve_shooting(...)`
        yield self.decision
        yield self.history


class _ShootingProblem:
    """Packing of decisions into a flat vector plus projected evaluation."""

    def __init__(self, ocp: SweepingOCP, init: DiscreteDecision, opts: ShootingOptions):
        if init.k != ocp.k:
            raise PreconditionError(f"initial decision has k={init.k}, problem has k={ocp.k}")
        self.ocp = ocp
        self.k = ocp.k
        self.n = init.x.shape[1]
        self.d = init.a.shape[1]
        self.blocks = min(opts.control_blocks or self.k, self.k)
        self.block_of = np.minimum(np.arange(self.k) * self.blocks // self.k, self.blocks - 1)
        self.optimize_u = opts.optimize_u
        self.u_fixed = init.u.copy()
        self.u_set = ocp.controls_u_k()
        self.T_lower = opts.T_lower if opts.T_lower is not None else 1e-6 * self.k
        self.T_upper = ocp.T_max

    def pack(self, decision: DiscreteDecision) -> np.ndarray:
        blocks = np.array([decision.a[self.block_of == b].mean(axis=0) for b in range(self.blocks)])
        parts = [blocks.ravel()]
        if self.optimize_u:
            parts.append(decision.u[1:].ravel())
        parts.append([decision.T])
        return np.concatenate(parts)

    def unpack(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
        size_a = self.blocks * self.d
        blocks = z[:size_a].reshape(self.blocks, self.d)
        a_cells = blocks[self.block_of]
        if self.optimize_u:
            u = np.vstack([self.u_fixed[:1], z[size_a:-1].reshape(self.k, self.n)])
        else:
            u = self.u_fixed
        return a_cells, u, float(z[-1])

    def project(self, z: np.ndarray) -> np.ndarray:
        out = z.copy()
        size_a = self.blocks * self.d
        blocks = out[:size_a].reshape(self.blocks, self.d)
        for b in range(self.blocks):
            blocks[b] = self.ocp.controls_a.project(blocks[b])
        out[:size_a] = blocks.ravel()
        if self.optimize_u and self.u_set is not None:
            u = out[size_a:-1].reshape(self.k, self.n)
            for j in range(self.k):
                u[j] = self.u_set.project(u[j])
            out[size_a:-1] = u.ravel()
        out[-1] = min(max(out[-1], self.T_lower), self.T_upper)
        return out

    def simulate(self, z: np.ndarray) -> DiscreteDecision:
        a_cells, u, T = self.unpack(z)
        ctrl = ControlSignal.from_knots(u, a_cells, T)
        traj = catching_up_simulate(
            self.ocp.geometry, self.ocp.dynamics, ctrl, self.ocp.x0, self.k, self.ocp.sign
        )
        return DiscreteDecision.from_trajectory(traj)

    def cost(self, z: np.ndarray) -> float:
        try:
            total, _ = cost_Jk(self.ocp, self.simulate(z))
        except (EvaluationFailure, ProjectionFailure, PreconditionError) as e:
            logger.debug("evaluation failed at T=%.6g: %s", z[-1], e)
            return float("inf")
        return total

    def gradient(self, z: np.ndarray, fd_step: float) -> np.ndarray:
        def partial(i: int) -> float:
            step = fd_step * (1.0 + abs(z[i]))
            plus, minus = z.copy(), z.copy()
            plus[i] += step
            minus[i] -= step
            return (self.cost(plus) - self.cost(minus)) / (2 * step)

        return np.array(map_bounded(partial, range(z.size)))


def solve_shooting(
    p: SweepingOCP,
    init: DiscreteDecision,
    opts: ShootingOptions | None = None,
) -> ShootingResult:
    """
    Projected-gradient descent with central finite differences and Armijo backtracking.

    The cost history is nonincreasing and the returned decision is the last
    accepted iterate. Status is one of "converged", "max_iters",
    "line_search_stall" or "localization_violated".

    Raises:
        InfeasibleInit: the initial decision violates the discrete constraints
    """
    opts = opts or ShootingOptions()
    report = check_constraints(p, init, tol=1e-4)
    bad = [name for name in _STRUCTURAL if report.residuals.get(name, 0.0) > 1e-4]
    if bad:
        raise InfeasibleInit(f"initial decision violates {', '.join(bad)}")

    problem = _ShootingProblem(p, init, opts)
    z = problem.project(problem.pack(init))
    J = problem.cost(z)
    if not np.isfinite(J):
        raise InfeasibleInit("cost is not finite at the initial decision")

    history: list[IterationRecord] = []
    status = "max_iters"
    step = 1.0
    for it in range(opts.max_iters):
        g = problem.gradient(z, opts.fd_step)
        gnorm = float(np.linalg.norm(z - problem.project(z - g)))
        history.append(IterationRecord(iter=it, cost=J, gnorm=gnorm, T=float(z[-1])))
        logger.debug("iter %d: J=%.10g gnorm=%.3e T=%.6g", it, J, gnorm, z[-1])

        gtol = opts.gtol if opts.gtol is not None else 1e-6 * (1.0 + abs(J))
        if gnorm <= gtol:
            status = "converged"
            break

        s = min(2.0 * step, 1e3)
        for _ in range(opts.max_halvings + 1):
            z_new = problem.project(z - s * g)
            J_new = problem.cost(z_new)
            if J_new <= J + opts.armijo_c * float(g @ (z_new - z)):
                break
            s *= 0.5
        else:
            logger.warning("line search stalled at iteration %d (J=%.10g)", it, J)
            status = "line_search_stall"
            break

        if p.localization is not None:
            trial = check_constraints(p, problem.simulate(z_new), tol=0.0)
            violated = [n for n in ("state_localization", "velocity_localization") if trial.residuals[n] > 0]
            if violated:
                logger.warning("iterate %d leaves the localization tube (%s)", it, ", ".join(violated))
                status = "localization_violated"
                break

        z, J, step = z_new, J_new, s

    if status == "max_iters":
        # the loop ended on an accepted step; record where it landed
        g = problem.gradient(z, opts.fd_step)
        gnorm = float(np.linalg.norm(z - problem.project(z - g)))
        history.append(IterationRecord(iter=len(history), cost=J, gnorm=gnorm, T=float(z[-1])))

    best = problem.simulate(z)
    logger.info("shooting finished: status=%s, J=%.10g, T=%.6g, %d iterations",
                status, J, best.T, len(history))
    return ShootingResult(decision=best, history=history, status=status, cost=J)

"""
Constraint geometry - the moving set C + u and the control sets.

C is the intersection of the smooth superlevel sets {g_i >= 0}; its normal
cone at y is N_C(y) = -cone{grad g_i(y) : i active}.

Provides:
- SmoothConstraint / ConstraintSet: evaluators plus the standing gradient and Hessian bounds
- active_indices, project, normal_cone_decompose, plicq_check, prox_modulus
- ControlSetU (nu_i <= slack) and ControlSetA (free, box, finite)
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Literal, NamedTuple

import numpy as np
from scipy.optimize import minimize, nnls

from .config import Config
from .exceptions import (
    Infeasible,
    NoConvergence,
    OutsideProxTube,
    PreconditionError,
    require_finite,
    require_positive,
)

logger = logging.getLogger(__name__)

# Hessian bound below which a set is treated as flat (prox-regular for any radius)
_CURVATURE_FLOOR = 1e-12

_MAX_OUTER = 50
_MAX_NEWTON = 50


@dataclass(frozen=True)
class SmoothConstraint:
    """One C^2 constraint function with its gradient and Hessian evaluators."""
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    label: str = "g"

    def __call__(self, y) -> float:
        return float(self.value(np.asarray(y, dtype=float)))

    def grad(self, y) -> np.ndarray:
        return np.asarray(self.gradient(np.asarray(y, dtype=float)), dtype=float).reshape(-1)

    def hess(self, y) -> np.ndarray:
        H = np.atleast_2d(np.asarray(self.hessian(np.asarray(y, dtype=float)), dtype=float))
        return 0.5 * (H + H.T)

    def check_derivatives(
        self,
        points,
        grad_rtol: float = 1e-5,
        hess_rtol: float = 1e-4,
    ) -> bool:
        """Compare gradient and Hessian against central finite differences."""
        for y in np.atleast_2d(np.asarray(points, dtype=float)):
            n = y.size
            g = self.grad(y)
            H = self.hess(y)
            fd_g = np.empty(n)
            fd_H = np.empty((n, n))
            for i in range(n):
                step = 1e-6 * (1.0 + abs(y[i]))
                e = np.zeros(n)
                e[i] = step
                fd_g[i] = (self(y + e) - self(y - e)) / (2 * step)
                hstep = 1e-5 * (1.0 + abs(y[i]))
                e[i] = hstep
                fd_H[:, i] = (self.grad(y + e) - self.grad(y - e)) / (2 * hstep)
            if np.linalg.norm(fd_g - g) > grad_rtol * max(1.0, np.linalg.norm(g)):
                logger.debug("gradient of %s fails finite differences at %s", self.label, y)
                return False
            if np.linalg.norm(fd_H - H) > hess_rtol * max(1.0, np.linalg.norm(H)):
                logger.debug("hessian of %s fails finite differences at %s", self.label, y)
                return False
        return True


@dataclass(frozen=True)
class StandingAssumptionReport:
    grad_min: float
    grad_max: float
    hess_max: float
    holds: bool


@dataclass(frozen=True)
class ConstraintSet:
    """C = intersection of {g_i >= 0} with its standing-assumption constants."""
    constraints: tuple[SmoothConstraint, ...]
    M1: float = 1.0
    M2: float = 1.0
    M3: float = 1.0
    beta: float = 1.0
    rho: float = 1.0
    c: float = 1.0e6
    active_tol: float = field(default_factory=lambda: Config.ACTIVE_TOL)

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if not self.constraints:
            raise PreconditionError("a constraint set needs at least one constraint")
        for name in ("M1", "M2", "M3", "beta", "rho", "c"):
            require_positive(getattr(self, name), name)

    @property
    def m(self) -> int:
        return len(self.constraints)

    def values(self, y) -> np.ndarray:
        return np.array([g(y) for g in self.constraints])

    def jacobian(self, y) -> np.ndarray:
        """Rows are the gradients grad g_i(y)."""
        return np.vstack([g.grad(y) for g in self.constraints])

    def hessians(self, y) -> np.ndarray:
        return np.stack([g.hess(y) for g in self.constraints])

    def contains(self, y, tol: float = 1e-9) -> bool:
        return bool(np.all(self.values(y) >= -tol))

    def check_standing_assumptions(self, points) -> StandingAssumptionReport:
        """Evaluate M1 <= |grad g_i| <= M2 and |hess g_i| <= M3 at sample points."""
        grad_norms, hess_norms = [], []
        for y in np.atleast_2d(np.asarray(points, dtype=float)):
            for g in self.constraints:
                grad_norms.append(np.linalg.norm(g.grad(y)))
                hess_norms.append(np.linalg.norm(g.hess(y), 2))
        report = StandingAssumptionReport(
            grad_min=min(grad_norms),
            grad_max=max(grad_norms),
            hess_max=max(hess_norms),
            holds=(
                min(grad_norms) >= self.M1 * (1 - 1e-9)
                and max(grad_norms) <= self.M2 * (1 + 1e-9)
                and max(hess_norms) <= self.M3 * (1 + 1e-9)
            ),
        )
        if not report.holds:
            logger.warning(
                "standing assumptions fail: |grad| in [%.3g, %.3g], |hess| <= %.3g",
                report.grad_min, report.grad_max, report.hess_max,
            )
        return report


@dataclass(frozen=True)
class ActiveSetReport:
    active: tuple[int, ...]
    rho_active: tuple[int, ...]
    values: np.ndarray


class Projection(NamedTuple):
    point: np.ndarray
    multipliers: np.ndarray


@dataclass(frozen=True)
class PlicqReport:
    holds: bool
    certificate: float


# ─────────────────────────────────────────────────────────────
# Active sets and projection
# ─────────────────────────────────────────────────────────────

def active_indices(cset: ConstraintSet, y, tol: float | None = None) -> ActiveSetReport:
    """Indices with |g_i(y)| <= tol, and the rho-perturbed set {g_i(y) <= rho}."""
    tol = cset.active_tol if tol is None else tol
    values = cset.values(require_finite(y, "y"))
    return ActiveSetReport(
        active=tuple(int(i) for i in np.flatnonzero(np.abs(values) <= tol)),
        rho_active=tuple(int(i) for i in np.flatnonzero(values <= cset.rho)),
        values=values,
    )


def _newton_on_working_set(
    cset: ConstraintSet,
    w: np.ndarray,
    working: list[int],
    y0: np.ndarray,
    lam0: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Damped Newton on y - w - G_W^T lam = 0, g_W(y) = 0."""
    n = w.size
    y, lam = y0.copy(), lam0.copy()
    scale = 1e-13 * (1.0 + np.linalg.norm(w))

    def residual(yy, ll):
        G = np.vstack([cset.constraints[i].grad(yy) for i in working])
        r1 = yy - w - G.T @ ll
        r2 = np.array([cset.constraints[i](yy) for i in working])
        return np.concatenate([r1, r2]), G

    res, G = residual(y, lam)
    for _ in range(_MAX_NEWTON):
        if np.linalg.norm(res) <= scale:
            return y, lam, True
        H = sum(l * cset.constraints[i].hess(y) for l, i in zip(lam, working))
        K = np.block([
            [np.eye(n) - H, -G.T],
            [G, np.zeros((len(working), len(working)))],
        ])
        try:
            step = np.linalg.solve(K, -res)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(K, -res, rcond=None)[0]
        dy, dl = step[:n], step[n:]
        merit = np.linalg.norm(res)
        t = 1.0
        while t > 1e-8:
            trial, G_trial = residual(y + t * dy, lam + t * dl)
            if np.linalg.norm(trial) <= (1 - 1e-4 * t) * merit:
                break
            t *= 0.5
        else:
            return y, lam, False
        y, lam = y + t * dy, lam + t * dl
        res, G = trial, G_trial
    return y, lam, bool(np.linalg.norm(res) <= scale)


def _active_set_projection(
    cset: ConstraintSet, w: np.ndarray, trial_tol: float
) -> tuple[np.ndarray, np.ndarray] | None:
    g = cset.values(w)
    working = [int(i) for i in np.flatnonzero(g < trial_tol)]
    feas_tol = 1e-10 * (1.0 + np.linalg.norm(w))
    y, lam_w = w.copy(), np.zeros(len(working))

    for _ in range(_MAX_OUTER):
        if working:
            y, lam_w, ok = _newton_on_working_set(cset, w, working, w.copy(), np.zeros(len(working)))
            if not ok:
                return None
        else:
            y, lam_w = w.copy(), np.zeros(0)

        if working and lam_w.min() < -1e-12:
            working.pop(int(np.argmin(lam_w)))
            continue

        g = cset.values(y)
        outside = [i for i in range(cset.m) if i not in working and g[i] < -feas_tol]
        if outside:
            working.append(min(outside, key=lambda i: g[i]))
            continue

        lam = np.zeros(cset.m)
        lam[working] = np.maximum(lam_w, 0.0)
        return y, lam
    return None


def _fallback_projection(cset: ConstraintSet, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    constraints = [
        {"type": "ineq", "fun": g.__call__, "jac": g.grad}
        for g in cset.constraints
    ]
    result = minimize(
        lambda y: 0.5 * float(np.sum((y - w) ** 2)),
        w.copy(),
        jac=lambda y: y - w,
        constraints=constraints,
        method="SLSQP",
        options={"ftol": 1e-15, "maxiter": 5000},
    )
    y = result.x
    act = active_indices(cset, y, max(cset.active_tol, 1e-7)).active
    lam = np.zeros(cset.m)
    if act:
        G = cset.jacobian(y)[list(act)]
        lam[list(act)], _ = nnls(G.T, y - w)
    return y, lam


def project(cset: ConstraintSet, z, shift=None) -> Projection:
    """
    Euclidean projection of z onto C + shift.

    The returned multipliers satisfy y - z = sum_i lam_i grad g_i(y - shift)
    with lam >= 0 and lam_i = 0 on inactive constraints, i.e. z - y lies in
    the normal cone of C + shift at y.

    Raises:
        NoConvergence: the active-set iteration and the SLSQP fallback both failed
        OutsideProxTube: the projection distance reaches c or the prox-regularity modulus
    """
    z = require_finite(z, "z")
    u = np.zeros_like(z) if shift is None else require_finite(shift, "shift")
    w = z - u

    if np.all(cset.values(w) >= 0.0):
        return Projection(z.copy(), np.zeros(cset.m))

    found = _active_set_projection(cset, w, 1e-6 * (1.0 + np.linalg.norm(z)))
    if found is None:
        logger.warning("active-set projection failed at %s, falling back to SLSQP", z)
        found = _fallback_projection(cset, w)
    y, lam = found

    g = cset.values(y)
    if g.min() < -1e-9 * (1.0 + np.linalg.norm(z)):
        raise NoConvergence(f"projection infeasible: min g = {g.min():.3e}")
    stationarity = y - w - cset.jacobian(y).T @ lam
    if np.linalg.norm(stationarity) > 1e-9 * (1.0 + np.linalg.norm(z)):
        raise NoConvergence(f"projection not stationary: residual {np.linalg.norm(stationarity):.3e}")

    distance = float(np.linalg.norm(y - w))
    if distance >= min(cset.c, prox_modulus(cset)):
        raise OutsideProxTube(
            f"distance {distance:.6g} outside the tube (c={cset.c:.6g}, eta={prox_modulus(cset):.6g})"
        )
    return Projection(y + u, lam)


# ─────────────────────────────────────────────────────────────
# Normal cones and constraint qualifications
# ─────────────────────────────────────────────────────────────

def cone_fit(G_rows: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, float]:
    """Nonnegative least squares of v on the rows of G_rows."""
    if G_rows.shape[0] == 0:
        return np.zeros(0), float(np.linalg.norm(v))
    coef, rnorm = nnls(G_rows.T, v)
    return coef, float(rnorm)


def normal_cone_decompose(cset: ConstraintSet, y, v, tol: float | None = None) -> np.ndarray:
    """
    Write v as sum_{i in I(y)} lam_i grad g_i(y) with lam >= 0.

    Returns the full length-m multiplier vector (zeros on inactive indices).

    Raises:
        PreconditionError: y is not in C within tol
        Infeasible: v is outside the cone of active gradients
    """
    tol = cset.active_tol if tol is None else tol
    y = require_finite(y, "y")
    v = require_finite(v, "v")
    if not cset.contains(y, tol):
        raise PreconditionError("normal_cone_decompose needs y in C")
    lam = np.zeros(cset.m)
    if not np.any(v):
        return lam
    act = list(active_indices(cset, y, tol).active)
    coef, rnorm = cone_fit(cset.jacobian(y)[act] if act else np.zeros((0, y.size)), v)
    if rnorm > max(1e-8, 1e-8 * np.linalg.norm(v)):
        raise Infeasible(f"vector is {rnorm:.3e} away from the active gradient cone")
    lam[act] = coef
    return lam


def plicq_check(cset: ConstraintSet, y, tol: float | None = None) -> PlicqReport:
    """
    Positive linear independence of the active gradients at y.

    The certificate is the distance from the origin to the convex hull of
    the active gradients, i.e. min |sum lam_i grad g_i| over the unit simplex.
    """
    act = list(active_indices(cset, y, tol).active)
    if not act:
        return PlicqReport(holds=True, certificate=float("inf"))
    G = cset.jacobian(y)[act]
    if len(act) == 1:
        cert = float(np.linalg.norm(G[0]))
    else:
        # min |G^T lam|^2 + (1^T lam - 1)^2 over lam >= 0, rescaled onto the simplex,
        # has the same KKT system as the simplex-constrained problem.
        A = np.vstack([G.T, np.ones((1, len(act)))])
        b = np.zeros(A.shape[0])
        b[-1] = 1.0
        lam, _ = nnls(A, b)
        lam = lam / lam.sum()
        cert = float(np.linalg.norm(G.T @ lam))
    return PlicqReport(holds=cert > 1e-8, certificate=cert)


def prox_modulus(cset: ConstraintSet, alpha_override: float | None = None) -> float:
    """eta = a / (M3 * beta) with a = alpha_override or M1; +inf for flat sets."""
    a = cset.M1 if alpha_override is None else require_positive(alpha_override, "alpha_override")
    if cset.M3 <= _CURVATURE_FLOOR:
        return float("inf")
    return a / (cset.M3 * cset.beta)


# ─────────────────────────────────────────────────────────────
# Control sets
# ─────────────────────────────────────────────────────────────

def box_normal_distance(z, v, lower, upper, tol: float = 1e-9) -> float:
    """Distance from v to the normal cone of the box [lower, upper] at z."""
    z, v = np.atleast_1d(np.asarray(z, float)), np.atleast_1d(np.asarray(v, float))
    lower = np.broadcast_to(np.asarray(lower, float), z.shape)
    upper = np.broadcast_to(np.asarray(upper, float), z.shape)
    defect = np.zeros_like(z)
    for i in range(z.size):
        at_lo = np.isfinite(lower[i]) and z[i] <= lower[i] + tol * (1 + abs(lower[i]))
        at_hi = np.isfinite(upper[i]) and z[i] >= upper[i] - tol * (1 + abs(upper[i]))
        if at_lo and at_hi:
            continue
        if at_lo:
            defect[i] = max(v[i], 0.0)
        elif at_hi:
            defect[i] = min(v[i], 0.0)
        else:
            defect[i] = v[i]
    return float(np.linalg.norm(defect))


def _shifted_negation(nu: SmoothConstraint, slack: float) -> SmoothConstraint:
    return SmoothConstraint(
        value=lambda u: slack - nu(u),
        gradient=lambda u: -nu.grad(u),
        hessian=lambda u: -nu.hess(u),
        label=f"{slack}-{nu.label}",
    )


@dataclass(frozen=True)
class ControlSetU:
    """U = {u : nu_i(u) <= slack}; slack is 0 for U and L_nu * delta_k for U_k."""
    functions: tuple[SmoothConstraint, ...] = ()
    lipschitz: float = 1.0
    slack: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "functions", tuple(self.functions))
        require_positive(self.lipschitz, "lipschitz")
        if self.slack < 0:
            raise PreconditionError("slack must be nonnegative")

    @property
    def s(self) -> int:
        return len(self.functions)

    def values(self, u) -> np.ndarray:
        return np.array([nu(u) for nu in self.functions])

    def contains(self, u, tol: float = 0.0) -> bool:
        return bool(np.all(self.values(u) <= self.slack + tol)) if self.functions else True

    def violation(self, u) -> float:
        if not self.functions:
            return 0.0
        return float(max(0.0, self.values(u).max() - self.slack))

    def with_slack(self, slack: float) -> "ControlSetU":
        return replace(self, slack=float(slack))

    def project(self, u) -> np.ndarray:
        """Nearest point of U (through the projection onto {slack - nu_i >= 0})."""
        if not self.functions or self.contains(u):
            return np.asarray(u, dtype=float).copy()
        as_set = ConstraintSet(
            tuple(_shifted_negation(nu, self.slack) for nu in self.functions),
            c=float("inf"),
            M3=_CURVATURE_FLOOR,
        )
        return project(as_set, u).point


@dataclass(frozen=True)
class ControlSetA:
    """Control set A: the whole space, a box, or a finite list of points."""
    kind: Literal["free", "box", "finite"] = "free"
    dimension: int = 1
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    points: np.ndarray | None = None

    @classmethod
    def free(cls, dimension: int) -> "ControlSetA":
        return cls(kind="free", dimension=dimension)

    @classmethod
    def box(cls, lower, upper) -> "ControlSetA":
        lo, hi = np.asarray(lower, float), np.asarray(upper, float)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise PreconditionError("box bounds must have equal shape and lower <= upper")
        return cls(kind="box", dimension=lo.size, lower=lo, upper=hi)

    @classmethod
    def finite(cls, points) -> "ControlSetA":
        pts = np.atleast_2d(np.asarray(points, float))
        return cls(kind="finite", dimension=pts.shape[1], points=pts)

    def project(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        if self.kind == "box":
            return np.clip(a, self.lower, self.upper)
        if self.kind == "finite":
            return self.points[int(np.argmin(np.linalg.norm(self.points - a, axis=1)))].copy()
        return a.copy()

    def distance(self, a) -> float:
        return float(np.linalg.norm(np.asarray(a, float) - self.project(a)))

    def contains(self, a, tol: float = 1e-12) -> bool:
        return self.distance(a) <= tol

    def normal_cone_distance(self, a, v, tol: float = 1e-9) -> float:
        """Distance from v to N_A(a); infinite when a is not in A."""
        v = np.asarray(v, dtype=float)
        if not self.contains(a, tol):
            return float("inf")
        if self.kind == "box":
            return box_normal_distance(a, v, self.lower, self.upper, tol)
        if self.kind == "finite":
            return 0.0
        return float(np.linalg.norm(v))

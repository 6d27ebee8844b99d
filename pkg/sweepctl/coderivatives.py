"""
Second-order generalized differentiation for the sweeping velocity map.

Coderivative sets are unbounded cones, so they are returned as parametric
descriptions: a fixed vector plus a combination of generator columns whose
coefficients obey per-index sign rules ("zero", "nonneg" or "free").

Provides:
- coderivative_orthant: D*N_{R^m_-}(x, v)(y) with the index partition
- coderivative_normal_cone: upper estimate of D*N_C(x, v)(y)
- coderivative_domain_check, coderivative_F_member, coderivative_F_element:
  the sweeping velocity map F(x, u, a) = -f(x, a) + N_C(x - u)
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.optimize import linprog, lsq_linear

from .dynamics import PerturbationMap
from .exceptions import (
    AmbiguousMultiplier,
    Infeasible,
    NoMultiplier,
    PreconditionError,
    require_finite,
)
from .geometry import ConstraintSet, active_indices, normal_cone_decompose, plicq_check

logger = logging.getLogger(__name__)

# tolerance on <grad g_i, y> for the strict sign rules
SIGN_TOL = 1e-8
MAX_ENUMERATED = 6


# ─────────────────────────────────────────────────────────────
# Orthant
# ─────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class OrthantGraphPoint:
    """(x, v) in gph N_{R^m_-}: x <= 0, v >= 0, x_i v_i = 0."""
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        x = require_finite(self.x, "x").reshape(-1)
        v = require_finite(self.v, "v").reshape(-1)
        if x.shape != v.shape:
            raise PreconditionError("x and v must have the same length")
        if np.any(x > 0) or np.any(v < 0) or np.any(x * v != 0):
            raise PreconditionError(f"({x}, {v}) is not in the graph of the orthant normal cone")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)


@dataclass(frozen=True)
class OrthantCoderivativeSet:
    """Either empty or the cone of gamma with gamma_i = 0 on I1, >= 0 on I2, free elsewhere."""
    kind: Literal["empty", "cone"]
    zero_indices: tuple[int, ...] = ()
    nonneg_indices: tuple[int, ...] = ()
    free_indices: tuple[int, ...] = ()

    def contains(self, gamma, tol: float = 1e-12) -> bool:
        if self.kind == "empty":
            return False
        gamma = np.asarray(gamma, dtype=float)
        return all(abs(gamma[i]) <= tol for i in self.zero_indices) and all(
            gamma[i] >= -tol for i in self.nonneg_indices
        )

    def sign_rules(self) -> dict[int, str]:
        rules = {i: "zero" for i in self.zero_indices}
        rules.update({i: "nonneg" for i in self.nonneg_indices})
        rules.update({i: "free" for i in self.free_indices})
        return dict(sorted(rules.items()))


def coderivative_orthant(pt: OrthantGraphPoint, y, tol: float = 0.0) -> OrthantCoderivativeSet:
    """Coderivative of the normal cone to the nonpositive orthant at (x, v) in direction y."""
    y = require_finite(y, "y").reshape(-1)
    if y.shape != pt.x.shape:
        raise PreconditionError("y must have the orthant's dimension")
    if np.any(np.abs(pt.v * y) > tol):
        return OrthantCoderivativeSet(kind="empty")
    zero, nonneg, free = [], [], []
    for i in range(y.size):
        if pt.x[i] < 0 or (pt.v[i] == 0 and y[i] < -tol):
            zero.append(i)
        elif pt.x[i] == 0 and pt.v[i] == 0 and y[i] > tol:
            nonneg.append(i)
        else:
            free.append(i)
    return OrthantCoderivativeSet(
        kind="cone", zero_indices=tuple(zero), nonneg_indices=tuple(nonneg), free_indices=tuple(free)
    )


# ─────────────────────────────────────────────────────────────
# Normal cone to C
# ─────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class CoderivativeCandidate:
    """fixed + generators @ gamma with gamma obeying `rules` (one candidate per multiplier)."""
    multiplier: np.ndarray
    fixed: np.ndarray
    generators: np.ndarray
    rules: dict[int, str] = field(default_factory=dict)
    empty: bool = False

    def element(self, gamma) -> np.ndarray:
        return self.fixed + self.generators @ np.asarray(gamma, dtype=float)

    def describe(self) -> dict:
        return {
            "multiplier": self.multiplier.tolist(),
            "empty": self.empty,
            "fixed": self.fixed.tolist(),
            "generators": self.generators.T.tolist(),
            "rules": {f"g{i + 1}": rule for i, rule in self.rules.items()},
        }


@dataclass(frozen=True)
class NormalConeCoderivative:
    candidates: list[CoderivativeCandidate]
    ambiguous: bool = False


def _enumerate_multipliers(G: np.ndarray, v: np.ndarray) -> tuple[list[np.ndarray], bool]:
    """Vertices of {lam >= 0 : -G^T lam = v} (rows of G are the active gradients)."""
    mJ = G.shape[0]
    scale = max(1e-8, 1e-8 * np.linalg.norm(v))
    if mJ == 0:
        return ([np.zeros(0)] if np.linalg.norm(v) <= scale else []), False
    rank = np.linalg.matrix_rank(G)
    if rank == mJ:
        lam, *_ = np.linalg.lstsq(-G.T, v, rcond=None)
        ok = lam.min() >= -1e-10 and np.linalg.norm(-G.T @ lam - v) <= scale
        return ([np.maximum(lam, 0.0)] if ok else []), False
    if mJ > MAX_ENUMERATED:
        raise AmbiguousMultiplier(f"{mJ} dependent active constraints; enumeration limited to {MAX_ENUMERATED}")

    vertices: list[np.ndarray] = []
    for size in range(0, rank + 1):
        for basis in itertools.combinations(range(mJ), size):
            cols = list(basis)
            lam = np.zeros(mJ)
            if cols:
                sub = G[cols]
                if np.linalg.matrix_rank(sub) < size:
                    continue
                lam[cols], *_ = np.linalg.lstsq(-sub.T, v, rcond=None)
            if lam.min() < -1e-10 or np.linalg.norm(-G.T @ lam - v) > scale:
                continue
            lam = np.maximum(lam, 0.0)
            if not any(np.allclose(lam, other, atol=1e-10) for other in vertices):
                vertices.append(lam)
    return vertices, len(vertices) > 1


def coderivative_normal_cone(cset: ConstraintSet, x_bar, v_bar, y, tol: float | None = None) -> NormalConeCoderivative:
    """
    Second-order upper estimate of D*N_C(x_bar, v_bar)(y).

    Each candidate is (-sum lam_i hess g_i(x_bar)) y - grad g(x_bar)^T gamma
    with gamma in the orthant coderivative at (-g(x_bar), lam) applied to
    -grad g(x_bar) y, for every multiplier lam >= 0 with -grad g^T lam = v_bar.

    Raises:
        PreconditionError: x_bar is not in C or PLICQ fails at x_bar
        NoMultiplier: v_bar is not in N_C(x_bar)
        AmbiguousMultiplier: more than MAX_ENUMERATED dependent active gradients
    """
    x_bar, v_bar, y = require_finite(x_bar, "x_bar"), require_finite(v_bar, "v_bar"), require_finite(y, "y")
    tol = cset.active_tol if tol is None else tol
    if not cset.contains(x_bar, tol):
        raise PreconditionError("x_bar must lie in C")
    if not plicq_check(cset, x_bar, tol).holds:
        raise PreconditionError("PLICQ fails at x_bar")

    report = active_indices(cset, x_bar, tol)
    act = list(report.active)
    jac = cset.jacobian(x_bar)
    hess = cset.hessians(x_bar)
    G_act = jac[act] if act else np.zeros((0, x_bar.size))
    vertices, ambiguous = _enumerate_multipliers(G_act, v_bar)
    if not vertices:
        raise NoMultiplier("v_bar is not in the normal cone of C at x_bar")
    if ambiguous:
        logger.warning("multiplier is not unique (%d vertices); returning an upper estimate", len(vertices))

    # orthant coordinates: active g's are treated as exactly zero
    x_orth = np.where(np.isin(np.arange(cset.m), act), 0.0, -report.values)
    y_orth = -jac @ y
    candidates = []
    for lam_act in vertices:
        lam = np.zeros(cset.m)
        lam[act] = lam_act
        fixed = -np.einsum("i,ijk->jk", lam, hess) @ y
        orth = coderivative_orthant(OrthantGraphPoint(x_orth, lam), y_orth, tol=SIGN_TOL)
        candidates.append(
            CoderivativeCandidate(
                multiplier=lam,
                fixed=fixed,
                generators=-jac.T,
                rules=orth.sign_rules(),
                empty=orth.kind == "empty",
            )
        )
    return NormalConeCoderivative(candidates=candidates, ambiguous=ambiguous)


# ─────────────────────────────────────────────────────────────
# Sweeping velocity map
# ─────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class MembershipResult:
    member: bool
    lam: np.ndarray | None = None
    gamma: np.ndarray | None = None
    defect: float = float("inf")


def _normal_multiplier_columns(cset: ConstraintSet, y_point, y, tol):
    act = list(active_indices(cset, y_point, tol).active)
    G = cset.jacobian(y_point)
    slopes = G @ y
    # complementarity lam_i <grad g_i, y> = 0 forces lam_i = 0 off the tangent directions
    lam_free = [i for i in act if abs(slopes[i]) <= SIGN_TOL]
    return act, G, slopes, lam_free


def coderivative_domain_check(
    cset: ConstraintSet,
    f: PerturbationMap,
    x,
    u,
    a,
    w,
    y,
    tol: float | None = None,
) -> bool:
    """
    Whether y may lie in the domain of D*F((x, u, a), w).

    True iff some lam >= 0 has -grad g(x - u)^T lam = w + f(x, a) and
    lam_i <grad g_i(x - u), y> = 0 for every i; decided by an LP.

    Raises:
        PreconditionError: w + f(x, a) is not a normal to C at x - u
    """
    x, u, w, y = (require_finite(v, name) for v, name in ((x, "x"), (u, "u"), (w, "w"), (y, "y")))
    point = x - u
    target = w + f(x, a)
    try:
        normal_cone_decompose(cset, point, -target, tol)
    except Infeasible as e:
        raise PreconditionError(f"w + f(x, a) is not in N_C(x - u): {e}") from e

    _, G, _, lam_free = _normal_multiplier_columns(cset, point, y, tol)
    if not lam_free:
        return bool(np.linalg.norm(target) <= max(1e-8, 1e-8 * np.linalg.norm(w)))
    result = linprog(
        c=np.zeros(len(lam_free)),
        A_eq=-G[lam_free].T,
        b_eq=target,
        bounds=[(0, None)] * len(lam_free),
        method="highs",
    )
    return result.status == 0


def coderivative_F_element(
    cset: ConstraintSet,
    f: PerturbationMap,
    x,
    u,
    a,
    y,
    lam,
    gamma,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(q_x, q_u, q_a) generated by multiplier lam and coefficients gamma."""
    x, u, y = np.asarray(x, float), np.asarray(u, float), np.asarray(y, float)
    lam, gamma = np.asarray(lam, float), np.asarray(gamma, float)
    point = x - u
    second = np.einsum("i,ijk->jk", lam, cset.hessians(point)) @ y + cset.jacobian(point).T @ gamma
    q_x = -f.dx(x, a).T @ y - second
    return q_x, second, -f.da(x, a).T @ y


def coderivative_F_member(
    cset: ConstraintSet,
    f: PerturbationMap,
    x,
    u,
    a,
    w,
    y,
    candidate,
    tol: float = 1e-8,
) -> MembershipResult:
    """
    Decide whether candidate = (q_x, q_u, q_a) lies in the coderivative
    upper estimate of F at ((x, u, a), w) in direction y.

    q_a and q_x + q_u are forced by f alone; the remaining test is linear
    in (lam, gamma) and solved by bounded least squares.
    """
    x, u, w, y = (np.asarray(v, dtype=float) for v in (x, u, w, y))
    q_x, q_u, q_a = (np.asarray(q, dtype=float) for q in candidate)
    scale = tol * (1.0 + float(np.linalg.norm(np.concatenate([q_x, q_u, q_a]))))
    fx, fa = f.dx(x, a), f.da(x, a)

    if np.linalg.norm(q_a + fa.T @ y) > scale:
        return MembershipResult(member=False, defect=float(np.linalg.norm(q_a + fa.T @ y)))
    if np.linalg.norm(q_x + q_u + fx.T @ y) > scale:
        return MembershipResult(member=False, defect=float(np.linalg.norm(q_x + q_u + fx.T @ y)))

    point = x - u
    target = w + f(x, a)
    act, G, slopes, lam_free = _normal_multiplier_columns(cset, point, y, cset.active_tol)
    hess = cset.hessians(point)
    n = x.size

    # gamma rules: zero off the active set or where <grad g, y> > 0, nonneg where < 0
    gamma_cols, gamma_lower = [], []
    for i in act:
        if slopes[i] > SIGN_TOL:
            continue
        gamma_cols.append(i)
        gamma_lower.append(0.0 if slopes[i] < -SIGN_TOL else -np.inf)

    n_lam, n_gam = len(lam_free), len(gamma_cols)
    A = np.zeros((2 * n, n_lam + n_gam))
    for col, i in enumerate(lam_free):
        A[:n, col] = -G[i]
        A[n:, col] = hess[i] @ y
    for col, i in enumerate(gamma_cols):
        A[n:, n_lam + col] = G[i]
    b = np.concatenate([target, q_u])

    if n_lam + n_gam == 0:
        coef = np.zeros(0)
        defect = float(np.linalg.norm(b))
    else:
        lower = np.array([0.0] * n_lam + gamma_lower)
        upper = np.full(n_lam + n_gam, np.inf)
        sol = lsq_linear(A, b, bounds=(lower, upper), method="bvls", tol=1e-14)
        coef = sol.x
        defect = float(np.linalg.norm(A @ coef - b))

    lam = np.zeros(cset.m)
    gamma = np.zeros(cset.m)
    lam[lam_free] = coef[:n_lam]
    gamma[gamma_cols] = coef[n_lam:]
    member = defect <= scale
    return MembershipResult(member=member, lam=lam if member else None, gamma=gamma if member else None, defect=defect)

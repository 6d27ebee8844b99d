"""
Discrete necessary optimality conditions: residuals and dual recovery.

Conventions used throughout (k cells, h = T / k, s = problem sign):
    c_j      = theta_X_j / h + v_x_j
    Lambda_j = p_x_{j+1} - lam * c_j
    xi_j     = (sum_i eta_ji hess g_i(x_j - u_j)) Lambda_j
with (w_x, w_u, w_a, v_x, v_u) the gradient of the running cost at cell j.
Every equation residual is the Euclidean norm of its defect stacked over j;
set-membership conditions become distances to closed-form normal cones and
implication conditions are scored as violating products.

Provides:
- DualVariables, AuxiliaryQuantities, ResidualReport
- compute_auxiliary, evaluate_residuals, recover_duals
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import lsq_linear, nnls

from . import quadrature
from .approximation import ReferenceSolution
from .exceptions import PreconditionError, UnsupportedEndpointSet
from .geometry import active_indices
from .ocp import DiscreteDecision, SweepingOCP

logger = logging.getLogger(__name__)

CONDITIONS = (
    "dynamics",
    "adjoint_x",
    "adjoint_u",
    "adjoint_a",
    "pu_link",
    "transversality_u",
    "transversality_xT",
    "slack_eta",
    "slack_gamma_I1",
    "slack_gamma_I2",
    "slack_alpha",
    "eta_orthogonality",
    "nontriviality",
    "enhanced_nontriviality",
    "psi_u_cone",
    "psi_a_cone",
)

TerminalSelection = tuple[np.ndarray, float]


@dataclass(frozen=True)
class DualVariables:
    lam: float
    alpha: np.ndarray
    p_x: np.ndarray
    p_u: np.ndarray
    psi_u: np.ndarray
    psi_a: np.ndarray
    eta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        for name in ("alpha", "p_x", "p_u", "psi_u", "psi_a", "eta", "gamma"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        k = self.eta.shape[0]
        if self.p_x.shape[0] != k + 1 or self.p_u.shape != self.p_x.shape:
            raise PreconditionError("p_x and p_u need k + 1 rows of equal width")
        if self.lam < 0 or np.any(self.alpha < 0) or np.any(self.eta < 0) or np.any(self.psi_u < 0):
            raise PreconditionError("lam, alpha, eta and psi_u must be nonnegative")

    @classmethod
    def zeros(cls, k: int, n: int, m: int, d: int, s: int = 0) -> "DualVariables":
        return cls(
            lam=0.0,
            alpha=np.zeros(m),
            p_x=np.zeros((k + 1, n)),
            p_u=np.zeros((k + 1, n)),
            psi_u=np.zeros((k, s)),
            psi_a=np.zeros((k, d)),
            eta=np.zeros((k, m)),
            gamma=np.zeros((k, m)),
        )

    @property
    def k(self) -> int:
        return self.eta.shape[0]

    def scaled(self, factor: float) -> "DualVariables":
        """Scale every dual except eta, which the primal determines."""
        return replace(
            self,
            lam=self.lam * factor,
            alpha=self.alpha * factor,
            p_x=self.p_x * factor,
            p_u=self.p_u * factor,
            psi_u=self.psi_u * factor,
            psi_a=self.psi_a * factor,
            gamma=self.gamma * factor,
        )

    def normalization(self) -> float:
        return float(
            self.lam
            + np.linalg.norm(self.alpha)
            + np.sum(np.linalg.norm(self.p_x, axis=1))
            + np.linalg.norm(self.p_u[0])
            + np.sum(np.linalg.norm(self.psi_u, axis=1))
            + np.sum(np.linalg.norm(self.psi_a, axis=1))
        )

    def enhanced_sum(self) -> float:
        return float(
            self.lam
            + np.sum(np.linalg.norm(self.psi_u, axis=1))
            + np.linalg.norm(self.p_x[-1])
            + np.linalg.norm(self.p_u[0])
        )


@dataclass(frozen=True)
class AuxiliaryQuantities:
    theta_X: np.ndarray
    theta_U: np.ndarray
    theta_a: np.ndarray
    Hbar: float
    varrho: float
    Lambda: np.ndarray
    xi: np.ndarray
    w_x: np.ndarray
    w_u: np.ndarray
    w_a: np.ndarray
    v_x: np.ndarray
    v_u: np.ndarray
    running: np.ndarray
    terminal: TerminalSelection


@dataclass(frozen=True)
class ResidualReport:
    residuals: dict[str, float]
    tol: float
    extras: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r <= self.tol for r in self.residuals.values())

    @property
    def failures(self) -> list[str]:
        return [name for name, r in self.residuals.items() if r > self.tol]

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values())

    def rows(self) -> list[tuple[str, float, float, bool]]:
        return [(name, r, self.tol, r <= self.tol) for name, r in self.residuals.items()]


# ─────────────────────────────────────────────────────────────
# Per-cell data shared by evaluation and recovery
# ─────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class _CellData:
    G: np.ndarray          # (k, m, n) gradients at x_j - u_j
    g: np.ndarray          # (k, m)
    H_eta: np.ndarray      # (k, n, n) sum_i eta_ji hess g_i
    Fx: np.ndarray         # (k, n, n)
    Fa: np.ndarray         # (k, n, d)
    drift: np.ndarray      # (k, n)
    active: list[list[int]]
    G_end: np.ndarray      # (m, n) at x_k - u_k
    g_end: np.ndarray      # (m,)


def _cell_data(p: SweepingOCP, d: DiscreteDecision, eta: np.ndarray) -> _CellData:
    cset, f = p.geometry, p.dynamics
    points = d.x[:-1] - d.u[:-1]
    G = np.stack([cset.jacobian(y) for y in points])
    hess = [cset.hessians(y) for y in points]
    return _CellData(
        G=G,
        g=np.array([cset.values(y) for y in points]),
        H_eta=np.stack([np.einsum("i,ijk->jk", eta[j], hess[j]) for j in range(d.k)]),
        Fx=np.stack([f.dx(d.x[j], d.a[j]) for j in range(d.k)]),
        Fa=np.stack([f.da(d.x[j], d.a[j]) for j in range(d.k)]),
        drift=np.stack([f(d.x[j], d.a[j]) for j in range(d.k)]),
        active=[list(active_indices(cset, y).active) for y in points],
        G_end=cset.jacobian(d.x[-1] - d.u[-1]),
        g_end=cset.values(d.x[-1] - d.u[-1]),
    )


def _reference_for(p: SweepingOCP, reference: ReferenceSolution | None) -> ReferenceSolution | None:
    if reference is not None:
        return reference
    return p.localization.reference if p.localization is not None else None


def _primal_auxiliary(p: SweepingOCP, d: DiscreteDecision, reference: ReferenceSolution | None):
    """Everything in the auxiliary quantities that does not involve duals."""
    k, h = d.k, d.h
    times = d.times
    vx, vu = d.x_rates, d.u_rates
    grads = [
        p.running_cost.gradient(times[j], d.x[j], d.u[j], d.a[j], vx[j], vu[j]) for j in range(k)
    ]
    running = np.array([
        p.running_cost(times[j], d.x[j], d.u[j], d.a[j], vx[j], vu[j]) for j in range(k)
    ])
    theta_X = np.zeros_like(vx)
    theta_U = np.zeros_like(vu)
    theta_a = np.zeros_like(d.a)
    varrho = 0.0
    if p.localization is not None and reference is not None:
        for j in range(k):
            t0, t1 = times[j], times[j + 1]
            theta_X[j] = quadrature.integrate_cell(lambda t, j=j: vx[j] - reference.velocity(t), t0, t1)
            theta_U[j] = quadrature.integrate_cell(lambda t, j=j: vu[j] - reference.shift_rate(t), t0, t1)
            theta_a[j] = quadrature.integrate_cell(lambda t, j=j: d.a[j] - reference.control(t), t0, t1)

            def gap(t, j=j):
                return float(
                    np.sum((d.a[j] - reference.control(t)) ** 2)
                    + np.sum((vx[j] - reference.velocity(t, left=True)) ** 2)
                    + np.sum((vu[j] - reference.shift_rate(t)) ** 2)
                )

            varrho -= (j + 1) / k * gap(t1) - j / k * gap(t0)
    return grads, running, theta_X, theta_U, theta_a, varrho


def compute_auxiliary(
    p: SweepingOCP,
    d: DiscreteDecision,
    duals: DualVariables,
    reference: ReferenceSolution | None = None,
    terminal_selection: TerminalSelection | None = None,
) -> AuxiliaryQuantities:
    """Theta integrals, Lambda_j, xi_j, the averaged Hamiltonian and varrho at a primal-dual pair."""
    reference = _reference_for(p, reference)
    grads, running, theta_X, theta_U, theta_a, varrho = _primal_auxiliary(p, d, reference)
    w_x, w_u, w_a, v_x, v_u = (np.array([g[i] for g in grads]) for i in range(5))
    h, k = d.h, d.k
    cells = _cell_data(p, d, duals.eta)

    Lambda = duals.p_x[1:] - duals.lam * (theta_X / h + v_x)
    xi = np.einsum("jab,jb->ja", cells.H_eta, Lambda)
    Hbar = float(
        np.sum(duals.p_x[1:] * d.x_rates) + np.sum(duals.p_u[1:] * d.u_rates) - duals.lam * running.sum()
    ) / k
    if terminal_selection is None:
        terminal_selection = p.terminal_cost.subgradient(d.x[-1], d.T)
    return AuxiliaryQuantities(
        theta_X=theta_X,
        theta_U=theta_U,
        theta_a=theta_a,
        Hbar=Hbar,
        varrho=varrho,
        Lambda=Lambda,
        xi=xi,
        w_x=w_x,
        w_u=w_u,
        w_a=w_a,
        v_x=v_x,
        v_u=v_u,
        running=running,
        terminal=(np.asarray(terminal_selection[0], float), float(terminal_selection[1])),
    )


# ─────────────────────────────────────────────────────────────
# Residual evaluation
# ─────────────────────────────────────────────────────────────

def _stacked_norm(rows) -> float:
    return float(np.sqrt(sum(float(np.sum(np.asarray(r) ** 2)) for r in rows)))


def _psi_u_defect(uk_set, u: np.ndarray, psi_u: np.ndarray, tol: float) -> float:
    if uk_set is None or psi_u.shape[1] == 0:
        return float(np.linalg.norm(psi_u))
    total = 0.0
    for j in range(psi_u.shape[0]):
        values = uk_set.values(u[j])
        for i, psi in enumerate(psi_u[j]):
            at_bound = values[i] >= uk_set.slack - tol
            total += max(0.0, -psi) ** 2 if at_bound else psi ** 2
    return float(np.sqrt(total))


def evaluate_residuals(
    p: SweepingOCP,
    d: DiscreteDecision,
    duals: DualVariables,
    reference: ReferenceSolution | None = None,
    tol: float = 1e-6,
    terminal_selection: TerminalSelection | None = None,
) -> ResidualReport:
    """
    Residuals of the discrete necessary optimality system at a primal-dual pair.

    Raises:
        UnsupportedEndpointSet: an endpoint set has no closed-form normal cone
    """
    if duals.k != d.k:
        raise PreconditionError(f"duals have k={duals.k}, decision has k={d.k}")
    cset, sign = p.geometry, p.sign
    active_tol = cset.active_tol
    reference = _reference_for(p, reference)
    aux = compute_auxiliary(p, d, duals, reference, terminal_selection)
    cells = _cell_data(p, d, duals.eta)
    h, k, lam = d.h, d.k, duals.lam
    vx, vu = d.x_rates, d.u_rates
    uk_set = p.controls_u_k()

    dynamics, adj_x, adj_u, adj_a, link = [], [], [], [], []
    slack_eta = slack_i1 = slack_i2 = orth = 0.0
    for j in range(k):
        G, act = cells.G[j], cells.active[j]
        cone = G[act].T @ duals.eta[j, act] if act else 0.0
        dynamics.append(vx[j] - sign * cells.drift[j] - cone)

        gamma_term = G.T @ duals.gamma[j]
        adj_x.append(
            (duals.p_x[j + 1] - duals.p_x[j]) / h - lam * aux.w_x[j]
            + sign * cells.Fx[j].T @ aux.Lambda[j] + aux.xi[j] + gamma_term
        )
        psi_term = 0.0
        if uk_set is not None and duals.psi_u.shape[1]:
            psi_term = sum(
                duals.psi_u[j, i] * nu.grad(d.u[j]) for i, nu in enumerate(uk_set.functions)
            )
        adj_u.append(
            (duals.p_u[j + 1] - duals.p_u[j]) / h - lam * aux.w_u[j] - psi_term / h
            - aux.xi[j] - gamma_term
        )
        adj_a.append(
            -lam * aux.w_a[j] - lam * aux.theta_a[j] / h - duals.psi_a[j] / h
            + sign * cells.Fa[j].T @ aux.Lambda[j]
        )
        link.append(duals.p_u[j + 1] - lam * (aux.v_u[j] + aux.theta_U[j] / h))

        slopes = G @ aux.Lambda[j]
        for i in range(cset.m):
            g_ji, eta_ji, gamma_ji = cells.g[j, i], duals.eta[j, i], duals.gamma[j, i]
            positive = g_ji > active_tol
            if positive:
                slack_eta += eta_ji * g_ji
            eta_zero = eta_ji <= active_tol
            if positive or (eta_zero and slopes[i] < -active_tol):
                slack_i1 += abs(gamma_ji)
            if not positive and eta_zero and slopes[i] > active_tol:
                slack_i2 += max(0.0, -gamma_ji)
            orth += eta_ji * abs(slopes[i])

    alpha_term = cells.G_end.T @ duals.alpha
    gx, gT = aux.terminal
    T_gap = (reference.horizon - d.T) if (p.localization is not None and reference is not None) else 0.0
    x_part = -duals.p_x[-1] + alpha_term - lam * gx
    T_part = aux.Hbar + lam * T_gap + lam * aux.varrho - lam * gT
    xT_defect = float(np.hypot(
        p.endpoint_x.normal_distance(d.x[-1], x_part),
        p.endpoint_T.normal_distance([d.T], [T_part]),
    ))

    positive_end = cells.g_end > active_tol
    S = duals.normalization()
    E = duals.enhanced_sum()
    residuals = {
        "dynamics": _stacked_norm(dynamics),
        "adjoint_x": _stacked_norm(adj_x),
        "adjoint_u": _stacked_norm(adj_u),
        "adjoint_a": _stacked_norm(adj_a),
        "pu_link": _stacked_norm(link),
        "transversality_u": float(np.linalg.norm(duals.p_u[-1] + alpha_term)),
        "transversality_xT": xT_defect,
        "slack_eta": float(slack_eta),
        "slack_gamma_I1": float(slack_i1),
        "slack_gamma_I2": float(slack_i2),
        "slack_alpha": float(np.sum(duals.alpha[positive_end] * cells.g_end[positive_end])),
        "eta_orthogonality": float(orth),
        "nontriviality": max(0.0, 1.0 - S),
        "enhanced_nontriviality": 1.0 if E <= 1e-14 else 0.0,
        "psi_u_cone": _psi_u_defect(uk_set, d.u, duals.psi_u, active_tol),
        "psi_a_cone": _stacked_norm(
            [p.controls_a.normal_cone_distance(d.a[j], duals.psi_a[j]) for j in range(k)]
        ),
    }
    extras = {
        "normalization": S,
        "enhanced_margin": E / S if S > 0 else 0.0,
        "multiplier": "normal" if lam > 0 else "abnormal",
        "Hbar": aux.Hbar,
        "varrho": aux.varrho,
    }
    report = ResidualReport(residuals=residuals, tol=tol, extras=extras)
    logger.info("optimality residuals: max=%.3e (%s)", report.max_residual,
                "pass" if report.passed else "fail: " + ", ".join(report.failures))
    return report


# ─────────────────────────────────────────────────────────────
# Dual recovery
# ─────────────────────────────────────────────────────────────

def _normal_bounds(z, lower, upper, tol: float) -> list[tuple[float, float] | None]:
    """Per-coordinate bounds of the normal cone of a box at z; None means the coordinate is 0."""
    out = []
    for zi, lo, hi in zip(np.atleast_1d(z), np.atleast_1d(lower), np.atleast_1d(upper)):
        at_lo = np.isfinite(lo) and zi <= lo + tol * (1 + abs(lo))
        at_hi = np.isfinite(hi) and zi >= hi - tol * (1 + abs(hi))
        if at_lo and at_hi:
            out.append((-np.inf, np.inf))
        elif at_lo:
            out.append((-np.inf, 0.0))
        elif at_hi:
            out.append((0.0, np.inf))
        else:
            out.append(None)
    return out


def _endpoint_bounds(endpoint, z, tol):
    z = np.atleast_1d(np.asarray(z, float))
    if endpoint.kind == "all":
        return [None] * z.size
    if endpoint.kind == "point":
        return [(-np.inf, np.inf)] * z.size
    if endpoint.kind in ("box", "halfline"):
        return _normal_bounds(endpoint.project(z), endpoint.lower, endpoint.upper, tol)
    raise UnsupportedEndpointSet(f"no closed-form normal cone for {endpoint.kind} endpoint set")


def _control_bounds(controls_a, a, tol):
    if controls_a.kind == "free":
        return [None] * a.size
    if controls_a.kind == "finite":
        return [(-np.inf, np.inf)] * a.size
    return _normal_bounds(a, controls_a.lower, controls_a.upper, tol)


class _Layout:
    """Column bookkeeping for the linear recovery system."""

    def __init__(self):
        self.size = 0
        self.bounds: list[tuple[float, float] | None] = []
        self.blocks: dict[str, np.ndarray] = {}

    def add(self, name: str, bounds: list[tuple[float, float] | None]) -> np.ndarray:
        idx = np.arange(self.size, self.size + len(bounds))
        self.blocks[name] = idx
        self.bounds.extend(bounds)
        self.size += len(bounds)
        return idx


def recover_duals(
    p: SweepingOCP,
    d: DiscreteDecision,
    reference: ReferenceSolution | None = None,
    tol: float = 1e-6,
    terminal_selection: TerminalSelection | None = None,
) -> tuple[DualVariables, ResidualReport]:
    """
    Best-fit duals for a primal decision.

    eta is fitted first from the dynamics by nonnegative least squares; with
    lam fixed to 1, p_u_{1..k} follow from the u-link equation, and the
    remaining duals solve a bounded linear least-squares problem over the
    adjoint and transversality equations. Sign constraints and the
    slackness-forced zeros (inactive constraints) are applied as bounds.
    The result is scaled so that the nontriviality sum equals 1.
    """
    cset, sign = p.geometry, p.sign
    active_tol = cset.active_tol
    reference = _reference_for(p, reference)
    k, h = d.k, d.h
    n, m, dim_a = d.x.shape[1], cset.m, d.a.shape[1]
    vx, vu = d.x_rates, d.u_rates
    uk_set = p.controls_u_k()
    s_dim = uk_set.s if uk_set is not None else 0

    # eta from the dynamics
    eta = np.zeros((k, m))
    points = d.x[:-1] - d.u[:-1]
    for j in range(k):
        act = list(active_indices(cset, points[j]).active)
        if act:
            G = cset.jacobian(points[j])[act]
            eta[j, act], _ = nnls(G.T, vx[j] - sign * p.dynamics(d.x[j], d.a[j]))

    lam = 1.0
    grads, running, theta_X, theta_U, theta_a, varrho = _primal_auxiliary(p, d, reference)
    w_x, w_u, w_a, v_x, v_u = (np.array([g[i] for g in grads]) for i in range(5))
    cells = _cell_data(p, d, eta)
    c = theta_X / h + v_x
    p_u_known = lam * (v_u + theta_U / h)    # rows j = 1..k
    if terminal_selection is None:
        terminal_selection = p.terminal_cost.subgradient(d.x[-1], d.T)
    gx, gT = np.asarray(terminal_selection[0], float), float(terminal_selection[1])
    T_gap = (reference.horizon - d.T) if (p.localization is not None and reference is not None) else 0.0

    layout = _Layout()
    P = layout.add("p_x", [(-np.inf, np.inf)] * ((k + 1) * n)).reshape(k + 1, n)
    Q0 = layout.add("p_u0", [(-np.inf, np.inf)] * n)
    alpha_idx = layout.add("alpha", [
        (0.0, np.inf) if cells.g_end[i] <= active_tol else None for i in range(m)
    ])
    psi_u_bounds = []
    for j in range(k):
        values = uk_set.values(d.u[j]) if s_dim else []
        psi_u_bounds.extend(
            (0.0, np.inf) if values[i] >= uk_set.slack - active_tol else None for i in range(s_dim)
        )
    PSU = layout.add("psi_u", psi_u_bounds).reshape(k, s_dim)
    PSA = layout.add("psi_a", [b for j in range(k) for b in _control_bounds(p.controls_a, d.a[j], 1e-9)]).reshape(k, dim_a)
    GAM = layout.add("gamma", [
        (-np.inf, np.inf) if cells.g[j, i] <= active_tol else None for j in range(k) for i in range(m)
    ]).reshape(k, m)
    NX = layout.add("n_x", _endpoint_bounds(p.endpoint_x, d.x[-1], 1e-9))
    NT = layout.add("n_T", _endpoint_bounds(p.endpoint_T, [d.T], 1e-9))

    rows: list[np.ndarray] = []
    rhs: list[float] = []

    def equation(coeffs: dict[int, float], constant: float):
        row = np.zeros(layout.size)
        for col, val in coeffs.items():
            row[col] += val
        rows.append(row)
        rhs.append(-constant)

    I = np.eye(n)
    for j in range(k):
        M = sign * cells.Fx[j].T + cells.H_eta[j]
        G = cells.G[j]
        # adjoint in x
        const = -lam * w_x[j] - M @ (lam * c[j])
        for r in range(n):
            coeffs: dict[int, float] = {}
            for col in range(n):
                coeffs[P[j + 1, col]] = coeffs.get(P[j + 1, col], 0.0) + I[r, col] / h + M[r, col]
                coeffs[P[j, col]] = coeffs.get(P[j, col], 0.0) - I[r, col] / h
            for i in range(m):
                coeffs[GAM[j, i]] = G[i, r]
            equation(coeffs, const[r])
        # adjoint in u
        pu_next = p_u_known[j]
        pu_now = p_u_known[j - 1] if j >= 1 else np.zeros(n)
        const = (pu_next - pu_now) / h - lam * w_u[j] + cells.H_eta[j] @ (lam * c[j])
        grad_nu = [nu.grad(d.u[j]) for nu in uk_set.functions] if s_dim else []
        for r in range(n):
            coeffs = {}
            if j == 0:
                coeffs[Q0[r]] = -1.0 / h
            for i in range(s_dim):
                coeffs[PSU[j, i]] = -grad_nu[i][r] / h
            for col in range(n):
                coeffs[P[j + 1, col]] = coeffs.get(P[j + 1, col], 0.0) - cells.H_eta[j][r, col]
            for i in range(m):
                coeffs[GAM[j, i]] = -G[i, r]
            equation(coeffs, const[r])
        # adjoint in a
        Fa = cells.Fa[j]
        const = -lam * w_a[j] - lam * theta_a[j] / h - sign * Fa.T @ (lam * c[j])
        for r in range(dim_a):
            coeffs = {PSA[j, r]: -1.0 / h}
            for col in range(n):
                coeffs[P[j + 1, col]] = sign * Fa[col, r]
            equation(coeffs, const[r])

    # transversality in u, then in (x, T)
    for r in range(n):
        equation({alpha_idx[i]: cells.G_end[i, r] for i in range(m)}, p_u_known[-1][r])
    for r in range(n):
        coeffs = {P[k, r]: -1.0, NX[r]: -1.0}
        for i in range(m):
            coeffs[alpha_idx[i]] = cells.G_end[i, r]
        equation(coeffs, -lam * gx[r])
    coeffs = {NT[0]: -1.0}
    for j in range(k):
        for col in range(n):
            coeffs[P[j + 1, col]] = coeffs.get(P[j + 1, col], 0.0) + vx[j, col] / k
    hbar_const = (float(np.sum(p_u_known * vu)) - lam * running.sum()) / k
    equation(coeffs, hbar_const + lam * T_gap + lam * varrho - lam * gT)

    A = np.vstack(rows)
    b = np.array(rhs)
    free = [i for i, bnd in enumerate(layout.bounds) if bnd is not None]
    solution = np.zeros(layout.size)
    if free:
        lower = np.array([layout.bounds[i][0] for i in free])
        upper = np.array([layout.bounds[i][1] for i in free])
        if np.all(np.isinf(lower)) and np.all(np.isinf(upper)):
            solution[free] = np.linalg.lstsq(A[:, free], b, rcond=None)[0]
        else:
            solution[free] = lsq_linear(A[:, free], b, bounds=(lower, upper), method="bvls", tol=1e-14).x
    logger.debug("dual recovery: %d equations, %d free unknowns, fit %.3e",
                 A.shape[0], len(free), np.linalg.norm(A @ solution - b))

    p_u = np.vstack([solution[Q0], p_u_known])
    raw = DualVariables(
        lam=lam,
        alpha=np.maximum(solution[alpha_idx], 0.0),
        p_x=solution[P],
        p_u=p_u,
        psi_u=np.maximum(solution[PSU], 0.0),
        psi_a=solution[PSA],
        eta=eta,
        gamma=solution[GAM],
    )
    duals = raw.scaled(1.0 / raw.normalization())
    report = evaluate_residuals(p, d, duals, reference, tol, terminal_selection)
    return duals, report

"""Problem containers, solutions, and KKT bookkeeping shared by all solvers.

Sign convention for multipliers (minimisation):

    grad f(x) = A_eq' y - A_ub' z + w_lo - w_hi,   z, w_lo, w_hi >= 0

so ``y`` is the shadow price of the equality right-hand side and ``z`` the
(nonnegative) price of relaxing an inequality.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

ACTIVE_TOL = 1e-7


class SolverError(RuntimeError):
    """Raised when a backend fails without a usable status."""


def _as_matrix(M, ncols):
    if M is None:
        return sp.csr_matrix((0, ncols))
    if sp.issparse(M):
        return M.tocsr()
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return sp.csr_matrix((0, ncols))
    return sp.csr_matrix(M)


def _as_vector(v, n, fill=0.0):
    if v is None:
        return np.full(n, fill, dtype=float)
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size == 1 and n != 1:
        return np.full(n, float(v[0]))
    return v.copy()


@dataclass
class LinearProgram:
    """min c'x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  lb <= x <= ub."""

    c: np.ndarray
    A_eq: object = None
    b_eq: np.ndarray | None = None
    A_ub: object = None
    b_ub: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.size
        self.A_eq = _as_matrix(self.A_eq, n)
        self.A_ub = _as_matrix(self.A_ub, n)
        self.b_eq = _as_vector(self.b_eq, self.A_eq.shape[0])
        self.b_ub = _as_vector(self.b_ub, self.A_ub.shape[0])
        self.lb = _as_vector(self.lb, n, 0.0)
        self.ub = _as_vector(self.ub, n, np.inf)
        self._validate()

    @property
    def n(self) -> int:
        return self.c.size

    def _validate(self):
        n = self.n
        if self.A_eq.shape[1] != n or self.A_ub.shape[1] != n:
            raise ValueError("constraint blocks must have one column per variable")
        if self.b_eq.size != self.A_eq.shape[0] or self.b_ub.size != self.A_ub.shape[0]:
            raise ValueError("right-hand side length does not match constraint rows")
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bounds must have one entry per variable")
        if np.any(self.lb > self.ub):
            raise ValueError("lower bound exceeds upper bound")

    def objective(self, x) -> float:
        return float(self.c @ x)


@dataclass
class QuadraticProgram(LinearProgram):
    """min 1/2 x'Qx + c'x over the same constraint blocks; Q must be PSD."""

    Q: object = None

    def __post_init__(self):
        super().__post_init__()
        n = self.n
        if self.Q is None:
            self.Q = sp.csr_matrix((n, n))
        elif sp.issparse(self.Q):
            self.Q = self.Q.tocsr().astype(float)
        else:
            self.Q = sp.csr_matrix(np.asarray(self.Q, dtype=float))
        if self.Q.shape != (n, n):
            raise ValueError("Q must be n-by-n")
        check_psd(self.Q)

    def objective(self, x) -> float:
        return float(0.5 * x @ (self.Q @ x) + self.c @ x)

    @classmethod
    def from_lp(cls, lp: LinearProgram, Q=None) -> "QuadraticProgram":
        return cls(c=lp.c, A_eq=lp.A_eq, b_eq=lp.b_eq, A_ub=lp.A_ub, b_ub=lp.b_ub,
                   lb=lp.lb, ub=lp.ub, Q=Q)


def check_psd(Q, floor: float = -1e-10) -> None:
    """Reject asymmetric or indefinite quadratic blocks."""
    Q = sp.csr_matrix(Q)
    asym = abs(Q - Q.T)
    if asym.nnz and asym.max() > 1e-12 * max(1.0, abs(Q).max()):
        raise ValueError("Q is not symmetric")
    offdiag = Q - sp.diags(Q.diagonal())
    diag = Q.diagonal()
    if offdiag.nnz == 0 or np.all(diag >= np.asarray(abs(offdiag).sum(axis=1)).ravel()):
        if diag.size and diag.min() < floor:
            raise ValueError("Q has a negative diagonal entry")
        return
    if Q.shape[0] > 3000:
        raise ValueError("cannot certify PSD for a large non-dominant Q")
    w = np.linalg.eigvalsh(Q.toarray())
    if w.min() < floor:
        raise ValueError(f"Q is not PSD (min eigenvalue {w.min():.3e})")


@dataclass
class Duals:
    eq: np.ndarray
    ineq: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


@dataclass
class Solution:
    status: str
    x: np.ndarray | None = None
    objective: float = np.nan
    duals: Duals | None = None
    active_set: frozenset = frozenset()
    basis: tuple | None = None
    iterations: int = 0
    nodes: int = 0
    gap: float = 0.0
    kkt: dict = field(default_factory=dict)
    incumbent_history: list = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def active_set(problem: LinearProgram, x, tol: float = ACTIVE_TOL) -> frozenset:
    """Constraint labels whose slack is within ``tol``."""
    act = set()
    if problem.A_ub.shape[0]:
        slack = problem.b_ub - problem.A_ub @ x
        act.update(("ub", int(i)) for i in np.flatnonzero(slack <= tol))
    act.update(("lb", int(j)) for j in np.flatnonzero(np.isfinite(problem.lb) & (x - problem.lb <= tol)))
    act.update(("ubnd", int(j)) for j in np.flatnonzero(np.isfinite(problem.ub) & (problem.ub - x <= tol)))
    return frozenset(act)


def kkt_residuals(problem: LinearProgram, x, duals: Duals) -> dict:
    """Primal feasibility, stationarity and complementarity residuals (inf-norms)."""
    Q = getattr(problem, "Q", None)
    grad = problem.c.copy()
    if Q is not None:
        grad = grad + Q @ x
    stat = grad - problem.A_eq.T @ duals.eq + problem.A_ub.T @ duals.ineq - duals.lower + duals.upper
    viol = [0.0]
    if problem.A_eq.shape[0]:
        viol.append(np.abs(problem.A_eq @ x - problem.b_eq).max())
    slack = problem.b_ub - problem.A_ub @ x
    if slack.size:
        viol.append(max(0.0, -slack.min()))
    lo_gap = x - problem.lb
    hi_gap = problem.ub - x
    viol.append(max(0.0, -np.min(lo_gap, initial=0.0)))
    viol.append(max(0.0, -np.min(hi_gap, initial=0.0)))
    comp = [0.0]
    if slack.size:
        comp.append(np.abs(duals.ineq * slack).max())
    fin_lo = np.isfinite(problem.lb)
    fin_hi = np.isfinite(problem.ub)
    if fin_lo.any():
        comp.append(np.abs(duals.lower[fin_lo] * lo_gap[fin_lo]).max())
    if fin_hi.any():
        comp.append(np.abs(duals.upper[fin_hi] * hi_gap[fin_hi]).max())
    dual_sign = min(0.0, duals.ineq.min(initial=0.0), duals.lower.min(initial=0.0),
                    duals.upper.min(initial=0.0))
    return {
        "primal": float(max(viol)),
        "stationarity": float(np.abs(stat).max(initial=0.0)),
        "complementarity": float(max(comp)),
        "dual_sign": float(-dual_sign),
    }


def lp_dual_objective(problem: LinearProgram, duals: Duals) -> float:
    """Lagrangian dual value; equals the primal optimum at an LP optimum."""
    val = problem.b_eq @ duals.eq - problem.b_ub @ duals.ineq
    lo = np.where(duals.lower != 0, problem.lb, 0.0)
    hi = np.where(duals.upper != 0, problem.ub, 0.0)
    return float(val + lo @ duals.lower - hi @ duals.upper)

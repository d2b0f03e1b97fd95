"""Convex QP via the Clarabel interior-point solver, with KKT certification."""
from __future__ import annotations

import clarabel
import numpy as np
import scipy.sparse as sp

from .problems import Duals, QuadraticProgram, Solution, SolverError, active_set, kkt_residuals

_SOLVED = {"Solved", "AlmostSolved"}
_INFEASIBLE = {"PrimalInfeasible", "AlmostPrimalInfeasible"}
_UNBOUNDED = {"DualInfeasible", "AlmostDualInfeasible"}


def _settings(tol):
    s = clarabel.DefaultSettings()
    s.verbose = False
    s.tol_gap_abs = tol
    s.tol_gap_rel = tol
    s.tol_feas = tol
    s.tol_ktratio = 1e-8
    s.max_iter = 300
    s.presolve_enable = False
    return s


def solve_qp(qp: QuadraticProgram, tol: float = 1e-10) -> Solution:
    """Solve a convex QP; fixed variables (lb == ub) go in as equalities."""
    n = qp.n
    fixed = np.flatnonzero(qp.lb == qp.ub)
    lo_rows = np.flatnonzero(np.isfinite(qp.lb) & (qp.lb != qp.ub))
    hi_rows = np.flatnonzero(np.isfinite(qp.ub) & (qp.lb != qp.ub))
    eye = sp.identity(n, format="csr")
    m_eq, m_ub = qp.A_eq.shape[0], qp.A_ub.shape[0]
    A = sp.vstack([qp.A_eq, eye[fixed], qp.A_ub, -eye[lo_rows], eye[hi_rows]], format="csc")
    b = np.concatenate([qp.b_eq, qp.ub[fixed], qp.b_ub, -qp.lb[lo_rows], qp.ub[hi_rows]])
    n_zero = m_eq + fixed.size
    cones = []
    if n_zero:
        cones.append(clarabel.ZeroConeT(n_zero))
    if A.shape[0] - n_zero:
        cones.append(clarabel.NonnegativeConeT(A.shape[0] - n_zero))
    P = sp.triu(qp.Q, format="csc")
    if A.shape[0] == 0:
        # unconstrained: solve the stationarity system directly
        try:
            x = np.linalg.lstsq(qp.Q.toarray(), -qp.c, rcond=None)[0]
        except np.linalg.LinAlgError as exc:  # pragma: no cover
            raise SolverError(str(exc)) from exc
        if np.abs(qp.Q @ x + qp.c).max(initial=0.0) > 1e-9:
            return Solution("unbounded")
        duals = Duals(np.zeros(0), np.zeros(0), np.zeros(n), np.zeros(n))
        return Solution("optimal", x, qp.objective(x), duals, frozenset(),
                        kkt=kkt_residuals(qp, x, duals))

    solver = clarabel.DefaultSolver(P, qp.c, A, b, cones, _settings(tol))
    res = solver.solve()
    status = str(res.status)
    if status in _INFEASIBLE:
        return Solution("infeasible", iterations=res.iterations)
    if status in _UNBOUNDED:
        return Solution("unbounded", iterations=res.iterations)
    if status not in _SOLVED and status not in {"MaxIterations", "InsufficientProgress", "MaxTime"}:
        raise SolverError(f"QP backend returned {status}")
    x = np.asarray(res.x, dtype=float)
    z = np.asarray(res.z, dtype=float)
    # clarabel dual z satisfies  Px + c + A'z = 0
    k = 0
    y = -z[k:k + m_eq]; k += m_eq
    z_fix = z[k:k + fixed.size]; k += fixed.size
    z_ub = z[k:k + m_ub]; k += m_ub
    z_lo = z[k:k + lo_rows.size]; k += lo_rows.size
    z_hi = z[k:k + hi_rows.size]
    w_lo = np.zeros(n)
    w_hi = np.zeros(n)
    w_lo[lo_rows] = z_lo
    w_hi[hi_rows] = z_hi
    # a fixed variable's multiplier is free; split by sign
    w_hi[fixed] += np.maximum(z_fix, 0.0)
    w_lo[fixed] += np.maximum(-z_fix, 0.0)
    x[fixed] = qp.lb[fixed]
    duals = Duals(y, np.maximum(z_ub, 0.0), w_lo, w_hi)
    kkt = kkt_residuals(qp, x, duals)
    ok = status in _SOLVED or (kkt["primal"] <= 1e-7 and kkt["stationarity"] <= 1e-6)
    return Solution("optimal" if ok else "iteration_limit", x, qp.objective(x), duals,
                    active_set(qp, x), iterations=res.iterations, kkt=kkt)

"""Dense bounded-variable primal simplex with Bland's rule.

The user problem is rewritten as  min c'x, A x = b, lo <= x <= hi  with every
``lo`` finite (slacks for inequalities, flips/splits for free variables).  The
final basis and its inverse are kept so that callers can do parametric work.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problems import Duals, LinearProgram, Solution, active_set, kkt_residuals

FEAS_TOL = 1e-9
OPT_TOL = 1e-11
PIV_TOL = 1e-11
REFACTOR_EVERY = 50


@dataclass
class StandardForm:
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    const: float
    # per user variable: (kind, col, other) with kind in plain/flip/split
    cols: list
    n_user: int
    m_eq: int
    m_ub: int


def to_standard(lp: LinearProgram) -> StandardForm:
    A_eq = lp.A_eq.toarray()
    A_ub = lp.A_ub.toarray()
    m_eq, m_ub = A_eq.shape[0], A_ub.shape[0]
    rows = np.vstack([A_eq, A_ub]) if m_eq + m_ub else np.zeros((0, lp.n))
    b = np.concatenate([lp.b_eq, lp.b_ub])
    cols_A, c, lo, hi, mapping = [], [], [], [], []
    const = 0.0
    k = 0
    for j in range(lp.n):
        a = rows[:, j]
        if np.isfinite(lp.lb[j]):
            mapping.append(("plain", k, None))
            cols_A.append(a); c.append(lp.c[j]); lo.append(lp.lb[j]); hi.append(lp.ub[j])
            k += 1
        elif np.isfinite(lp.ub[j]):
            # x = ub - x', x' >= 0
            mapping.append(("flip", k, lp.ub[j]))
            cols_A.append(-a); c.append(-lp.c[j]); lo.append(0.0); hi.append(np.inf)
            b = b - a * lp.ub[j]
            const += lp.c[j] * lp.ub[j]
            k += 1
        else:
            mapping.append(("split", k, k + 1))
            cols_A += [a, -a]; c += [lp.c[j], -lp.c[j]]; lo += [0.0, 0.0]; hi += [np.inf, np.inf]
            k += 2
    for i in range(m_ub):
        e = np.zeros(m_eq + m_ub)
        e[m_eq + i] = 1.0
        cols_A.append(e); c.append(0.0); lo.append(0.0); hi.append(np.inf)
    A = np.column_stack(cols_A) if cols_A else np.zeros((m_eq + m_ub, 0))
    return StandardForm(np.array(c, float), A, b, np.array(lo, float), np.array(hi, float),
                        const, mapping, lp.n, m_eq, m_ub)


class _Tableau:
    """Revised simplex state over a standard-form problem (artificials appended)."""

    def __init__(self, A, b, lo, hi):
        self.A, self.b, self.lo, self.hi = A, b, lo.copy(), hi.copy()
        self.m, self.n = A.shape
        self.iterations = 0
        self._since_refactor = 0

    def start_artificial(self, x_nonbasic):
        """Install an all-artificial basis; structural variables sit at x_nonbasic."""
        m = self.m
        r = self.b - self.A @ x_nonbasic
        sign = np.where(r >= 0, 1.0, -1.0)
        self.n_struct = self.n
        self.A = np.hstack([self.A, np.diag(sign)])
        self.lo = np.concatenate([self.lo, np.zeros(m)])
        self.hi = np.concatenate([self.hi, np.full(m, np.inf)])
        self.n = self.A.shape[1]
        self.x = np.concatenate([x_nonbasic, np.abs(r)])
        self.basis = list(range(self.n_struct, self.n))
        self.at_upper = np.zeros(self.n, dtype=bool)
        self.Binv = np.diag(sign)

    def refactor(self):
        self.Binv = np.linalg.inv(self.A[:, self.basis])
        nb = np.ones(self.n, dtype=bool)
        nb[self.basis] = False
        rhs = self.b - self.A[:, nb] @ self.x[nb]
        self.x[self.basis] = self.Binv @ rhs
        self._since_refactor = 0

    def reduced_costs(self, cost):
        y = self.Binv.T @ cost[self.basis]
        d = cost - self.A.T @ y
        d[self.basis] = 0.0
        return y, d

    def run(self, cost, max_iter):
        """Primal simplex from the current basic feasible solution."""
        while True:
            if self.iterations >= max_iter:
                return "iteration_limit"
            y, d = self.reduced_costs(cost)
            is_basic = np.zeros(self.n, dtype=bool)
            is_basic[self.basis] = True
            movable = (~is_basic) & (self.hi - self.lo > 0)
            scale = max(1.0, np.abs(cost).max(initial=0.0))
            tol = OPT_TOL * scale
            cand = movable & (((~self.at_upper) & (d < -tol)) | (self.at_upper & (d > tol)))
            if not cand.any():
                return "optimal"
            q = int(np.flatnonzero(cand)[0])
            direction = 1.0 if not self.at_upper[q] else -1.0
            alpha = self.Binv @ self.A[:, q]
            step = direction * alpha
            xb = self.x[self.basis]
            lob = self.lo[self.basis]
            hib = self.hi[self.basis]
            ratios = np.full(self.m, np.inf)
            dec = step > PIV_TOL
            inc = step < -PIV_TOL
            ratios[dec] = (xb[dec] - lob[dec]) / step[dec]
            ratios[inc] = (hib[inc] - xb[inc]) / (-step[inc])
            ratios = np.maximum(ratios, 0.0)
            t_flip = self.hi[q] - self.lo[q]
            t_ratio = ratios.min(initial=np.inf)
            t = min(t_flip, t_ratio)
            if not np.isfinite(t):
                return "unbounded"
            self.iterations += 1
            self.x[q] += direction * t
            self.x[self.basis] = xb - step * t
            if t_flip <= t_ratio:
                self.at_upper[q] = not self.at_upper[q]
                continue
            ties = np.flatnonzero(ratios <= t_ratio + 1e-12)
            r = int(min(ties, key=lambda i: self.basis[i]))
            leaving = self.basis[r]
            self.at_upper[leaving] = bool(inc[r])
            self.x[leaving] = self.hi[leaving] if inc[r] else self.lo[leaving]
            self.at_upper[q] = False
            self.pivot(r, q, alpha)

    def pivot(self, r, q, alpha):
        row = self.Binv[r] / alpha[r]
        self.Binv -= np.outer(alpha, row)
        self.Binv[r] = row
        self.basis[r] = q
        self._since_refactor += 1
        if self._since_refactor >= REFACTOR_EVERY:
            self.refactor()


def _recover(sf: StandardForm, xs, ds, y):
    n = sf.n_user
    x = np.zeros(n)
    d_user = np.zeros(n)
    for j, (kind, k, other) in enumerate(sf.cols):
        if kind == "plain":
            x[j] = xs[k]
            d_user[j] = ds[k]
        elif kind == "flip":
            x[j] = other - xs[k]
            d_user[j] = -ds[k]
        else:
            x[j] = xs[k] - xs[other]
            d_user[j] = ds[k]
    return x, d_user


def solve_lp(lp: LinearProgram, max_iter: int = 20000) -> Solution:
    """Solve ``lp`` by two-phase bounded simplex; exact vertex, duals and basis."""
    sf = to_standard(lp)
    m, n = sf.A.shape
    if m == 0:
        # pure bound problem: each variable at its cheaper bound
        x = np.where(lp.c > 0, lp.lb, np.where(lp.c < 0, lp.ub, np.where(np.isfinite(lp.lb), lp.lb, np.minimum(lp.ub, 0.0))))
        if not np.all(np.isfinite(x)):
            return Solution("unbounded")
        duals = Duals(np.zeros(0), np.zeros(0), np.maximum(lp.c, 0), np.maximum(-lp.c, 0))
        return Solution("optimal", x, lp.objective(x), duals, active_set(lp, x), basis=(),
                        kkt=kkt_residuals(lp, x, duals))

    tab = _Tableau(sf.A, sf.b, sf.lo, sf.hi)
    tab.start_artificial(sf.lo.copy())
    phase1 = np.concatenate([np.zeros(n), np.ones(m)])
    status = tab.run(phase1, max_iter)
    if status == "iteration_limit":
        return Solution("iteration_limit", iterations=tab.iterations)
    tab.refactor()
    infeas = tab.x[n:].sum()
    if infeas > FEAS_TOL * max(1.0, np.abs(sf.b).max(initial=0.0)):
        return Solution("infeasible", iterations=tab.iterations)
    # fix artificials at zero and drive on with the true costs
    tab.hi[n:] = 0.0
    tab.x[n:] = 0.0
    cost = np.concatenate([sf.c, np.zeros(m)])
    status = tab.run(cost, max_iter)
    if status != "optimal":
        return Solution(status, iterations=tab.iterations)
    tab.refactor()
    y, d = tab.reduced_costs(cost)
    x, d_user = _recover(sf, tab.x[:n], d[:n], y)
    y_eq = y[: sf.m_eq]
    z_ub = -y[sf.m_eq:]
    # slack reduced cost is exactly -y_i; clean sign noise
    z_ub = np.maximum(z_ub, 0.0)
    duals = Duals(y_eq, z_ub, np.maximum(d_user, 0.0), np.maximum(-d_user, 0.0))
    sol = Solution("optimal", x, lp.objective(x), duals, active_set(lp, x),
                   basis=tuple(tab.basis), iterations=tab.iterations)
    sol.kkt = kkt_residuals(lp, x, duals)
    sol.tableau = tab  # kept for parametric continuation
    sol.standard = sf
    return sol

"""Sub-hourly regulation dispatch.

For a cleared hour the aggregator must split ``P_hat - s * R_hat`` over its EVs
for every signal ``s``.  The dispatch LP is parametric in the scalar ``s``;
we sweep ``s`` from -1 to +1 keeping an optimal basis and pivot (dual simplex)
whenever a basic variable reaches a bound.  Each basis gives a critical region
on which the optimiser is affine in ``s``, so online dispatch is a binary
search plus one multiply-add.

Per-EV variable order is ``[pc, pd, dup, ddn]`` (charge, discharge, upward and
downward deployment).
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .optimize import LinearProgram, QuadraticProgram, solve_lp, solve_miqp

log = logging.getLogger(__name__)

NV = 4
TIE_EPS = 1e-8
LAMBDA_DECIMALS = 6
REGION_TOL = 1e-12
CACHE_RES = 1e-3


class RelaxationError(ValueError):
    """Raised when a deployment-exclusion relaxation cannot be justified."""


class DispatchInfeasible(RuntimeError):
    pass


@dataclass
class DispatchProblem:
    P_hat: float
    R_hat: float
    p0: np.ndarray
    p_lo: np.ndarray
    p_hi: np.ndarray
    dup: np.ndarray
    ddn: np.ndarray
    lam: np.ndarray
    c_dp: np.ndarray
    eta_d: np.ndarray
    ids: list = field(default_factory=list)
    members: np.ndarray | None = None  # positions in the full fleet

    def __post_init__(self):
        n = np.asarray(self.p0).size
        for name in ("p0", "p_lo", "p_hi", "dup", "ddn", "lam", "c_dp", "eta_d"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if v.size == 1 and n != 1:
                v = np.full(n, v[0])
            setattr(self, name, v)
        if not self.ids:
            self.ids = [str(i) for i in range(n)]
        if self.members is None:
            self.members = np.arange(n)
        if self.R_hat < 0:
            raise ValueError("cleared regulation capacity must be nonnegative")
        if np.any(self.dup < 0) or np.any(self.ddn < 0):
            raise ValueError("reserve caps must be nonnegative")

    @property
    def n(self) -> int:
        return self.p0.size

    @classmethod
    def from_commitment(cls, commit, c_dp=None, P_hat=None, R_hat=None) -> "DispatchProblem":
        """Build from an hour's bid, sanitising solver noise in the caps."""
        on = np.flatnonzero(commit.present)
        p0 = np.clip(commit.p0[on], commit.p_lo[on], commit.p_hi[on])
        dup = np.clip(commit.dup[on], 0.0, p0 - commit.p_lo[on])
        ddn = np.clip(commit.ddn[on], 0.0, commit.p_hi[on] - p0)
        R = commit.R if R_hat is None else R_hat
        R = float(max(0.0, min(R, dup.sum(), ddn.sum())))
        cdp = commit.extra.get("c_dp", 0.05) if c_dp is None else c_dp
        return cls(P_hat=float(p0.sum()) if P_hat is None else P_hat, R_hat=R, p0=p0,
                   p_lo=commit.p_lo[on], p_hi=commit.p_hi[on], dup=dup, ddn=ddn,
                   lam=np.round(np.maximum(commit.lam[on], 0.0), LAMBDA_DECIMALS),
                   c_dp=np.broadcast_to(np.asarray(cdp, dtype=float), (on.size,)).copy(),
                   eta_d=commit.eta_d[on], ids=[commit.ids[i] for i in on], members=on)


@dataclass
class DispatchResult:
    pc: np.ndarray
    pd: np.ndarray
    dup: np.ndarray
    ddn: np.ndarray
    value: float

    @property
    def net(self) -> np.ndarray:
        return self.pc - self.pd


def exact_relaxation_applicable(problem: DispatchProblem):
    """(ok, ids of EVs whose price exceeds the re-dispatch coefficient)."""
    bad = [problem.ids[i] for i in np.flatnonzero(problem.lam - problem.c_dp > 0)]
    return len(bad) == 0, bad


def true_costs(problem: DispatchProblem) -> np.ndarray:
    c = np.empty(NV * problem.n)
    c[0::NV] = 0.0
    c[1::NV] = problem.lam / problem.eta_d
    c[2::NV] = problem.lam - problem.c_dp
    c[3::NV] = problem.lam + problem.c_dp
    return c


def tie_break_costs(problem: DispatchProblem) -> np.ndarray:
    """Tiny per-EV cost offsets that make the optimum unique."""
    n = problem.n
    c = true_costs(problem)
    rank = TIE_EPS * (np.arange(n) + 1) / (n + 1)
    c[1::NV] += TIE_EPS
    c[2::NV] += rank
    c[3::NV] += rank
    return c


@dataclass
class ParametricLP:
    lp: LinearProgram  # at theta = 0
    F: np.ndarray  # rhs = b_eq + F * theta
    c_true: np.ndarray
    problem: DispatchProblem
    certify: bool = False  # exclusion must be checked on the result

    def at(self, theta: float) -> LinearProgram:
        lp = self.lp
        return LinearProgram(lp.c, lp.A_eq, lp.b_eq + self.F * theta, None, None, lp.lb, lp.ub)


def _constraints(problem: DispatchProblem):
    n = problem.n
    A = np.zeros((n + 1, NV * n))
    A[0, 0::NV] = 1.0
    A[0, 1::NV] = -1.0
    for i in range(n):
        A[i + 1, NV * i:NV * i + NV] = [1.0, -1.0, 1.0, -1.0]
    b = np.concatenate([[problem.P_hat], problem.p0])
    F = np.zeros(n + 1)
    F[0] = -problem.R_hat
    lb = np.zeros(NV * n)
    ub = np.empty(NV * n)
    ub[0::NV] = problem.p_hi
    ub[1::NV] = -problem.p_lo
    ub[2::NV] = problem.dup
    ub[3::NV] = problem.ddn
    return A, b, F, lb, ub


def build_dispatch_lp(problem: DispatchProblem, certify: bool = False) -> ParametricLP:
    """Parametric dispatch LP.  With ``certify`` the price precondition is
    skipped and ``compute_regions`` instead proves that every region's map keeps
    up/down deployments exclusive, which makes the LP optimum the MIQP optimum."""
    ok, bad = exact_relaxation_applicable(problem)
    if not ok and not certify:
        raise RelaxationError(f"price above re-dispatch coefficient for {bad}; use dispatch_direct")
    A, b, F, lb, ub = _constraints(problem)
    lp = LinearProgram(tie_break_costs(problem), A, b, None, None, lb, ub)
    return ParametricLP(lp, F, true_costs(problem), problem, certify=not ok)


def exclusion_violation(x) -> float:
    """Largest per-EV product of the paired charge/discharge and up/down parts."""
    x = np.asarray(x)
    return float(max(np.max(x[..., 0::NV] * x[..., 1::NV], initial=0.0),
                     np.max(x[..., 2::NV] * x[..., 3::NV], initial=0.0)))


def check_exclusion(pol: "DispatchPolicy", tol: float = 1e-10) -> None:
    # affine and nonnegative on each interval: the product vanishes everywhere
    # iff it vanishes at both ends and the midpoint
    for g in pol.regions:
        for th in (g.theta_lo, 0.5 * (g.theta_lo + g.theta_hi), g.theta_hi):
            if exclusion_violation(g.x(th)) > tol:
                raise RelaxationError(f"relaxed dispatch mixes directions at signal {th:.6f}")


@dataclass
class CriticalRegion:
    theta_lo: float
    theta_hi: float
    R: np.ndarray
    r: np.ndarray
    value_slope: float
    value_offset: float
    active_set: str

    def x(self, theta):
        return self.R * theta + self.r


@dataclass
class DispatchPolicy:
    regions: list
    n_ev: int
    ids: list
    members: np.ndarray | None = None
    build_seconds: float = 0.0
    merged: int = 0

    def __post_init__(self):
        self.theta_lo = np.array([g.theta_lo for g in self.regions])
        self.theta_hi = np.array([g.theta_hi for g in self.regions])
        self.Rm = np.array([g.R for g in self.regions]).reshape(len(self.regions), -1)
        self.rm = np.array([g.r for g in self.regions]).reshape(len(self.regions), -1)
        self.vs = np.array([g.value_slope for g in self.regions])
        self.vo = np.array([g.value_offset for g in self.regions])
        if self.members is None:
            self.members = np.arange(self.n_ev)


def _active_label(basis, at_upper, lo, hi, nstruct):
    low, up = [], []
    bset = set(basis)
    for j in range(nstruct):
        if j in bset or lo[j] == hi[j]:
            continue
        (up if at_upper[j] else low).append(j)
    return "L" + ".".join(map(str, low)) + "|U" + ".".join(map(str, up))


def compute_regions(plp: ParametricLP) -> DispatchPolicy:
    """Sweep theta over [-1, 1] by basis continuation."""
    t_start = time.perf_counter()
    prob = plp.problem
    sol = solve_lp(plp.at(-1.0))
    if sol.status != "optimal":
        raise DispatchInfeasible(f"dispatch LP is {sol.status} at signal -1")
    tab = sol.tableau
    nstruct = plp.lp.n
    A = tab.A
    m, ntot = A.shape
    lo, hi = tab.lo.copy(), tab.hi.copy()
    b0 = plp.lp.b_eq
    F = plp.F
    cost = np.concatenate([plp.lp.c, np.zeros(ntot - nstruct)])
    basis = list(tab.basis)
    at_upper = tab.at_upper.copy()
    regions = []
    merged = 0
    theta = -1.0
    guard = 0
    while theta < 1.0:
        guard += 1
        if guard > 50 * (ntot + 1):
            raise RuntimeError("region sweep did not terminate")
        Binv = np.linalg.inv(A[:, basis])
        nonb = np.ones(ntot, dtype=bool)
        nonb[basis] = False
        xN = np.where(at_upper, hi, lo)
        xN[~nonb] = 0.0
        beta = Binv @ (b0 - A[:, nonb] @ xN[nonb])
        gamma = Binv @ F
        lob, hib = lo[basis], hi[basis]
        # how far the basis stays primal feasible
        t_hi = np.full(m, np.inf)
        g = np.abs(gamma) > 1e-13
        up = g & (gamma > 0)
        dn = g & (gamma < 0)
        t_hi[up] = (hib[up] - beta[up]) / gamma[up]
        t_hi[dn] = (lob[dn] - beta[dn]) / gamma[dn]
        theta_next = min(1.0, t_hi.min(initial=np.inf))
        if theta_next < theta - 1e-9:
            raise DispatchInfeasible(f"basis lost feasibility at signal {theta}")
        theta_next = max(theta_next, theta)
        if theta_next - theta > REGION_TOL:
            Rv = np.zeros(ntot)
            rv = xN.copy()
            rv[basis] = beta
            Rv[basis] = gamma
            Rv, rv = Rv[:nstruct], rv[:nstruct]
            regions.append(CriticalRegion(theta + 0.0, theta_next + 0.0, Rv, rv, float(plp.c_true @ Rv),
                                          float(plp.c_true @ rv),
                                          _active_label(basis, at_upper, lo, hi, nstruct)))
        else:
            merged += 1
        if theta_next >= 1.0:
            break
        theta = theta_next
        # leaving row: first basic variable to block, smallest index on ties
        blocking = np.flatnonzero(t_hi <= t_hi.min() + 1e-12)
        r = int(min(blocking, key=lambda i: basis[i]))
        to_upper = gamma[r] > 0
        y = Binv.T @ cost[basis]
        d = cost - A.T @ y
        alpha_r = Binv[r] @ A
        movable = nonb & (hi > lo)
        if to_upper:
            elig = movable & (((~at_upper) & (alpha_r > 1e-11)) | (at_upper & (alpha_r < -1e-11)))
        else:
            elig = movable & (((~at_upper) & (alpha_r < -1e-11)) | (at_upper & (alpha_r > 1e-11)))
        if not elig.any():
            raise DispatchInfeasible(f"dispatch LP infeasible beyond signal {theta:.6f}")
        ratios = np.full(ntot, np.inf)
        ratios[elig] = np.abs(d[elig] / alpha_r[elig])
        best = ratios.min()
        q = int(np.flatnonzero(ratios <= best + 1e-12 * max(1.0, best))[0])
        leaving = basis[r]
        at_upper[leaving] = bool(to_upper)
        basis[r] = q
        at_upper[q] = False
    if merged:
        log.info("merged %d zero-width regions", merged)
    pol = DispatchPolicy(regions, prob.n, list(prob.ids), prob.members,
                         time.perf_counter() - t_start, merged)
    validate_policy(pol, plp)
    if plp.certify:
        check_exclusion(pol)
    return pol


def feasibility_residual(plp: ParametricLP, x, theta) -> float:
    lp = plp.lp
    eq = np.abs(lp.A_eq @ x - (lp.b_eq + plp.F * theta)).max(initial=0.0)
    bnd = max(np.max(lp.lb - x, initial=0.0), np.max(x - lp.ub, initial=0.0))
    return float(max(eq, bnd))


def validate_policy(pol: DispatchPolicy, plp: ParametricLP, tol: float = 1e-8) -> None:
    for g in pol.regions:
        for th in (g.theta_lo, 0.5 * (g.theta_lo + g.theta_hi), g.theta_hi):
            res = feasibility_residual(plp, g.x(th), th)
            if res > tol:
                raise DispatchInfeasible(f"region [{g.theta_lo}, {g.theta_hi}] infeasible at {th} ({res:.2e})")
    if pol.regions and (abs(pol.regions[0].theta_lo + 1) > 1e-10 or abs(pol.regions[-1].theta_hi - 1) > 1e-10):
        raise DispatchInfeasible("regions do not cover [-1, 1]")
    for a, b in zip(pol.regions, pol.regions[1:]):
        if abs(a.theta_hi - b.theta_lo) > 1e-10:
            raise DispatchInfeasible("gap between regions")


def _split(x, value):
    return DispatchResult(x[0::NV].copy(), x[1::NV].copy(), x[2::NV].copy(), x[3::NV].copy(), float(value))


def _clamp(s):
    if s < -1.0 or s > 1.0:
        log.warning("signal %.6f outside [-1, 1], clamped", s)
        return min(1.0, max(-1.0, s))
    return s


def lookup(policy: DispatchPolicy, s: float) -> DispatchResult:
    s = _clamp(float(s))
    k = int(np.searchsorted(policy.theta_lo, s, side="right")) - 1
    k = min(max(k, 0), len(policy.regions) - 1)
    x = policy.Rm[k] * s + policy.rm[k]
    return _split(x, policy.vs[k] * s + policy.vo[k])


def lookup_many(policy: DispatchPolicy, signals):
    """Vectorised lookup; returns (X of shape (D, 4N), values)."""
    s = np.clip(np.asarray(signals, dtype=float), -1.0, 1.0)
    k = np.clip(np.searchsorted(policy.theta_lo, s, side="right") - 1, 0, len(policy.regions) - 1)
    X = policy.Rm[k] * s[:, None] + policy.rm[k]
    return X, policy.vs[k] * s + policy.vo[k]


def _fixed_lp(problem, s, zc, zu):
    A, b, F, lb, ub = _constraints(problem)
    ub = ub.copy()
    ub[1::NV] = np.where(zc == 1, 0.0, ub[1::NV])
    ub[0::NV] = np.where(zc == 0, 0.0, ub[0::NV])
    ub[3::NV] = np.where(zu == 1, 0.0, ub[3::NV])
    ub[2::NV] = np.where(zu == 0, 0.0, ub[2::NV])
    return LinearProgram(tie_break_costs(problem), A, b + F * s, None, None, lb, ub)


class DirectDispatcher:
    """Per-signal solves; exclusion binaries when the relaxation is not exact."""

    def __init__(self, problem: DispatchProblem, force_miqp: bool = False):
        self.problem = problem
        self.force_miqp = force_miqp
        self.relaxed, _ = exact_relaxation_applicable(problem)
        self.c_true = true_costs(problem)
        self._patterns = {}

    def _pattern(self, s):
        key = int(round(s / CACHE_RES))
        if key in self._patterns:
            return self._patterns[key]
        prob = self.problem
        n = prob.n
        A, b, F, lb, ub = _constraints(prob)
        # variables [x (4n), zc (n), zu (n)]; zc=1 allows charging, zu=1 allows upward
        nt = NV * n + 2 * n
        rows, rhs = [], []
        for i in range(n):
            for var, cap_idx, zi, flip in ((NV * i, 0, NV * n + i, False), (NV * i + 1, 1, NV * n + i, True),
                                           (NV * i + 2, 2, NV * n + n + i, False), (NV * i + 3, 3, NV * n + n + i, True)):
                row = np.zeros(nt)
                cap = ub[NV * i + cap_idx]
                row[var] = 1.0
                # x <= cap * z  or  x <= cap * (1 - z)
                row[zi] = cap if flip else -cap
                rows.append(row)
                rhs.append(cap if flip else 0.0)
        A_eq = np.hstack([A, np.zeros((A.shape[0], 2 * n))])
        c = np.concatenate([tie_break_costs(prob), np.zeros(2 * n)])
        qp = QuadraticProgram(c=c, A_eq=A_eq, b_eq=b + F * s, A_ub=np.array(rows), b_ub=np.array(rhs),
                              lb=np.concatenate([lb, np.zeros(2 * n)]),
                              ub=np.concatenate([ub, np.ones(2 * n)]))
        sol = solve_miqp(qp, np.arange(NV * n, nt), node_limit=2000)
        if sol.x is None:
            raise DispatchInfeasible(f"no feasible dispatch for signal {s}")
        pat = (np.round(sol.x[NV * n:NV * n + n]).astype(int), np.round(sol.x[NV * n + n:]).astype(int))
        self._patterns[key] = pat
        return pat

    def solve(self, s: float) -> DispatchResult:
        s = _clamp(float(s))
        prob = self.problem
        A, b, F, lb, ub = _constraints(prob)
        sol = solve_lp(LinearProgram(tie_break_costs(prob), A, b + F * s, None, None, lb, ub))
        exact = self.relaxed or exclusion_violation(sol.x) <= 1e-10
        if sol.status == "optimal" and exact and not self.force_miqp:
            # a relaxation optimum that already respects exclusion solves the MIQP
            return _split(sol.x, self.c_true @ sol.x)
        if sol.status != "optimal":
            raise DispatchInfeasible(f"dispatch LP {sol.status} at signal {s}")
        sol = solve_lp(_fixed_lp(prob, s, *self._pattern(s)))
        if sol.status != "optimal":
            # the cached pattern came from a nearby signal; redo it at this one
            self._patterns.pop(int(round(s / CACHE_RES)), None)
            sol = solve_lp(_fixed_lp(prob, s, *self._pattern(s)))
        if sol.status != "optimal":
            raise DispatchInfeasible(f"dispatch LP {sol.status} at signal {s}")
        return _split(sol.x, self.c_true @ sol.x)


def dispatch_direct(problem: DispatchProblem, s: float) -> DispatchResult:
    return DirectDispatcher(problem).solve(s)


# baseline allocation protocols -------------------------------------------------

def water_fill(total, caps, weights=None, offsets=None):
    """x_i = clip(w_i * (L - o_i), 0, cap_i) with sum x = total, exact via breakpoints."""
    caps = np.asarray(caps, dtype=float)
    n = caps.size
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    o = np.zeros(n) if offsets is None else np.asarray(offsets, dtype=float)
    if total <= 0:
        return np.zeros(n)
    cap_sum = caps[w > 0].sum()
    if total > cap_sum * (1 + 1e-12) + 1e-12:
        raise ValueError(f"allocation {total} exceeds total cap {cap_sum}")
    act = (w > 0) & (caps > 0)
    if not act.any():
        raise ValueError("no capacity to allocate")
    lo_bp = o[act]
    hi_bp = o[act] + caps[act] / w[act]
    bps = np.unique(np.concatenate([lo_bp, hi_bp]))

    def f(L):
        return np.clip(w[act] * (L - o[act]), 0.0, caps[act]).sum()

    vals = np.array([f(L) for L in bps])
    k = int(np.searchsorted(vals, total, side="left"))
    if k >= bps.size:
        L = bps[-1]
    elif k == 0:
        L = bps[0]
    else:
        L0, L1, v0, v1 = bps[k - 1], bps[k], vals[k - 1], vals[k]
        L = L1 if v1 == v0 else L0 + (total - v0) * (L1 - L0) / (v1 - v0)
    x = np.zeros(n)
    x[act] = np.clip(w[act] * (L - o[act]), 0.0, caps[act])
    # absorb rounding in the largest free share
    err = total - x.sum()
    if abs(err) > 0:
        slack = np.where(err > 0, caps - x, x)
        slack[~act] = 0
        i = int(np.argmax(slack))
        x[i] += err
    return x


def baseline_allocations(problem: DispatchProblem, s: float, method: str, cumulative=None) -> DispatchResult:
    """Deployment split by a fixed protocol: proportional, round_robin or max_fairness.

    ``cumulative`` (max_fairness only) holds per-EV compensation accrued so far;
    the new deployment raises the lowest accounts first.
    """
    q = float(s) * problem.R_hat
    up = q >= 0
    caps = problem.dup if up else problem.ddn
    total = abs(q)
    if total > caps.sum() * (1 + 1e-12) + 1e-12:
        raise ValueError(f"signal {s} needs {total} kW but caps sum to {caps.sum()}")
    if method == "proportional":
        delta = caps * (total / caps.sum()) if total > 0 else np.zeros(problem.n)
    elif method == "round_robin":
        delta = water_fill(total, caps)
    elif method == "max_fairness":
        X = np.zeros(problem.n) if cumulative is None else np.asarray(cumulative, dtype=float)
        free = problem.lam <= 0
        delta = np.zeros(problem.n)
        # deployments on unpaid EVs cost nothing and do not move anyone's account
        take = min(total, caps[free].sum())
        if take > 0:
            delta[free] = water_fill(take, caps[free])
        rest = total - take
        if rest > 1e-15:
            paid = ~free
            delta[paid] = water_fill(rest, caps[paid], 1.0 / problem.lam[paid], X[paid])
    else:
        raise ValueError(f"unknown allocation method {method!r}")
    dup = delta if up else np.zeros(problem.n)
    ddn = np.zeros(problem.n) if up else delta
    net = problem.p0 - dup + ddn
    pc, pd = np.maximum(net, 0.0), np.maximum(-net, 0.0)
    x = np.empty(NV * problem.n)
    x[0::NV], x[1::NV], x[2::NV], x[3::NV] = pc, pd, dup, ddn
    return _split(x, true_costs(problem) @ x)


# policy serialisation ------------------------------------------------------------

def write_policy_csv(policy: DispatchPolicy, path) -> None:
    nv = NV * policy.n_ev
    with open(path, "w", newline="") as fh:
        fh.write(f"# n_ev={policy.n_ev}\n")
        fh.write("# order=" + ",".join(f"{k}[{i}]" for i in range(policy.n_ev) for k in ("pc", "pd", "dup", "ddn")) + "\n")
        fh.write("# ids=" + ",".join(policy.ids) + "\n")
        fh.write("# members=" + ",".join(str(int(m)) for m in policy.members) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theta_lo", "theta_hi"] + [f"R{i}" for i in range(nv)] + [f"r{i}" for i in range(nv)]
                   + ["value_slope", "value_offset", "active_set"])
        for g in policy.regions:
            w.writerow([repr(float(g.theta_lo)), repr(float(g.theta_hi))] + [repr(float(v)) for v in g.R]
                       + [repr(float(v)) for v in g.r] + [repr(float(g.value_slope)), repr(float(g.value_offset)),
                                                          g.active_set])


def read_policy_csv(path) -> DispatchPolicy:
    meta = {}
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for ln in lines:
        if ln.startswith("# "):
            k, _, v = ln[2:].partition("=")
            meta[k] = v
        else:
            body.append(ln)
    n = int(meta["n_ev"])
    ids = meta.get("ids", "").split(",") if meta.get("ids") else []
    members = np.array([int(v) for v in meta["members"].split(",")]) if meta.get("members") else None
    reader = csv.reader(body)
    next(reader)
    nv = NV * n
    regions = []
    for row in reader:
        vals = [float(v) for v in row[:2 + 2 * nv + 2]]
        regions.append(CriticalRegion(vals[0], vals[1], np.array(vals[2:2 + nv]), np.array(vals[2 + nv:2 + 2 * nv]),
                                      vals[2 + 2 * nv], vals[3 + 2 * nv], row[4 + 2 * nv] if len(row) > 4 + 2 * nv else ""))
    return DispatchPolicy(regions, n, ids, members)

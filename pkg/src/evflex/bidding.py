"""Receding-horizon stochastic bidding for the aggregator.

Each hour the aggregator solves a mixed-integer QP over the remaining day:
energy bid P_e and regulation capacity R per hour, per-EV baseline power p0,
reserve ranges dup/ddn, and a flexibility price lam that clears the EV's
affine supply curve.  Typical signal scenarios carry the expected re-dispatch
cost and an expected energy path; the two extreme signals (-1, +1) are only
enforced as constraints.

Variable layout (counting for documentation and tests).  With H horizon hours,
S_A typical and S_B extreme scenarios, and for EV n with h_n present hours of
which v_n allow discharge (p_lo < 0):

    variables = 2H + sum_n [ h_n (8 + 3 S_A + 2 S_B) + v_n (3 + 2 S_A) ]
    binaries  = sum_n v_n (1 + S_A)

per present hour: p0, dup, ddn, lam, flex, e0, eu, ed; per typical scenario:
pc, du, dd; per extreme: du, dd.  Discharge-capable hours add pd and mu per
typical scenario, plus the charge/discharge split (pcd, pdd) of the full
downward deployment with its selector binary.

The full upward deployment p0 - dup needs no split.  Its energy increment
min(eta_c p, p / eta_d) is concave, and only the floor e_lo binds on that
trajectory, so eu is kept as a lower bound of the true path through two linear
cuts per hour.  The ceiling on that path follows from eu <= ed.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fleet import DT, T, EvProfile, energy_envelope, power_envelope
from .flexibility import build_supply_curve
from .market import MarketPrices
from .optimize import QuadraticProgram, solve_miqp
from .scenarios import ScenarioSet

log = logging.getLogger(__name__)

LAMBDA_CAP_FACTOR = 10.0
STATE_TOL = 1e-6


class BidCompileError(ValueError):
    pass


class BidInfeasibleError(RuntimeError):
    pass


@dataclass
class EvaState:
    hour: int
    energy: np.ndarray
    s_prev: float = 0.0

    @classmethod
    def initial(cls, fleet) -> "EvaState":
        return cls(0, np.array([ev.e_arrive for ev in fleet], dtype=float), 0.0)


class _Builder:
    def __init__(self):
        self.n = 0
        self.lb, self.ub, self.c = [], [], []
        self.eq = ([], [], [])
        self.b_eq = []
        self.ineq = ([], [], [])
        self.b_ub = []
        self.qdiag = {}

    def var(self, lb=0.0, ub=np.inf, cost=0.0) -> int:
        self.lb.append(lb); self.ub.append(ub); self.c.append(cost)
        self.n += 1
        return self.n - 1

    def _row(self, store, rhs_list, terms, rhs):
        r = len(rhs_list)
        for col, val in terms:
            store[0].append(r); store[1].append(col); store[2].append(val)
        rhs_list.append(rhs)

    def eq_row(self, terms, rhs=0.0):
        self._row(self.eq, self.b_eq, terms, rhs)

    def ub_row(self, terms, rhs=0.0):
        self._row(self.ineq, self.b_ub, terms, rhs)

    def build(self) -> QuadraticProgram:
        n = self.n
        A_eq = sp.csr_matrix((self.eq[2], (self.eq[0], self.eq[1])), shape=(len(self.b_eq), n))
        A_ub = sp.csr_matrix((self.ineq[2], (self.ineq[0], self.ineq[1])), shape=(len(self.b_ub), n))
        q = np.zeros(n)
        for k, v in self.qdiag.items():
            q[k] = v
        return QuadraticProgram(c=np.array(self.c), A_eq=A_eq, b_eq=np.array(self.b_eq),
                                A_ub=A_ub, b_ub=np.array(self.b_ub), lb=np.array(self.lb),
                                ub=np.array(self.ub), Q=sp.diags(q, format="csr"))


@dataclass
class BiddingProblem:
    qp: QuadraticProgram
    binaries: np.ndarray
    idx: dict
    fleet: list
    start: int
    hours: int
    typical: np.ndarray
    probs: np.ndarray
    extremes: np.ndarray
    k: np.ndarray  # (N, H) supply-curve slopes
    present: np.ndarray  # (N, H) bool
    v2g: np.ndarray  # (N, H) bool


def _neg(shape):
    return np.full(shape, -1, dtype=int)


def compile_bidding(fleet, prices: MarketPrices, scenarios: ScenarioSet, state: EvaState,
                    horizon: int | None = None, mileage_forecast=None, dt: float = DT,
                    lambda_cap=None) -> BiddingProblem:
    """Build the bidding MIQP for hours state.hour .. state.hour + horizon - 1."""
    tau = state.hour
    H = (prices.hours - tau) if horizon is None else horizon
    if H <= 0:
        raise BidCompileError("empty bidding horizon")
    N = len(fleet)
    sa = scenarios.typical_values()
    pa = scenarios.typical_probs()
    sb = scenarios.extreme_values()
    if sb.size == 0:
        raise BidCompileError("scenario set lacks the extreme signals")
    SA, SB = sa.size, sb.size
    m_hat = np.zeros(H) if mileage_forecast is None else np.broadcast_to(
        np.asarray(mileage_forecast, dtype=float), (prices.hours,))[tau:tau + H]
    b = _Builder()
    idx = {"P_e": np.array([b.var(-np.inf, np.inf, dt * prices.c_e[tau + j]) for j in range(H)]),
           "R": np.array([b.var(0.0, np.inf, -(prices.c_cap[tau + j] + prices.c_per[tau + j] * m_hat[j]))
                          for j in range(H)])}
    for name in ("p0", "dup", "ddn", "lam", "flex", "e0", "eu", "ed", "pcd", "pdd", "nu_dn"):
        idx[name] = _neg((N, H))
    for name in ("pc", "pd", "du", "dd", "mu"):
        idx[name] = _neg((N, H, SA))
    for name in ("xdu", "xdd"):
        idx[name] = _neg((N, H, SB))
    kmat = np.zeros((N, H))
    present = np.zeros((N, H), dtype=bool)
    v2g = np.zeros((N, H), dtype=bool)
    binaries = []
    span = max(prices.hours, tau + H)

    for n, ev in enumerate(fleet):
        hrs = [j for j in range(H) if ev.present(tau + j)]
        if not hrs:
            continue
        p_lo_all, p_hi_all = power_envelope(ev, span)
        try:
            e_lo_all, e_hi_all = energy_envelope(ev, span, dt)
        except ValueError as exc:
            raise BidCompileError(str(exc)) from exc
        e_start = float(state.energy[n]) if ev.t_arrive <= tau else ev.e_arrive
        t0 = tau + hrs[0]
        if e_start < e_lo_all[t0] - STATE_TOL or e_start > e_hi_all[t0] + STATE_TOL:
            raise BidCompileError(
                f"EV {ev.id}: energy {e_start:.6f} kWh at hour {t0} outside [{e_lo_all[t0]:.6f}, {e_hi_all[t0]:.6f}]")
        e_start = min(max(e_start, e_lo_all[t0]), e_hi_all[t0])
        prev = {"e0": None, "eu": None, "ed": None}
        for j in hrs:
            t = tau + j
            p_lo, p_hi = p_lo_all[t], p_hi_all[t]
            k = build_supply_curve(ev, prices.c_fee[t], dt).k
            lam_hi = LAMBDA_CAP_FACTOR * prices.c_fee[t] if lambda_cap is None else lambda_cap
            kmat[n, j] = k
            present[n, j] = True
            dis = p_lo < 0
            v2g[n, j] = dis
            p0 = b.var(p_lo, p_hi, -prices.c_fee[t] * dt)
            dup = b.var(0.0, p_hi - p_lo)
            ddn = b.var(0.0, p_hi - p_lo)
            lam = b.var(0.0, lam_hi, ev.xi)
            b.qdiag[lam] = 2.0 * k
            flex = b.var(0.0, np.inf)
            e_vars = {name: b.var(e_lo_all[t + 1], e_hi_all[t + 1]) for name in ("e0", "eu", "ed")}
            for name, v in (("p0", p0), ("dup", dup), ("ddn", ddn), ("lam", lam), ("flex", flex)):
                idx[name][n, j] = v
            for name, v in e_vars.items():
                idx[name][n, j] = v
            # reserve ranges inside the power envelope
            b.ub_row([(dup, 1.0), (p0, -1.0)], -p_lo)
            b.ub_row([(ddn, 1.0), (p0, 1.0)], p_hi)
            # supply-curve clearing
            b.eq_row([(flex, 1.0), (lam, -k)], ev.xi)
            flex_terms = [(flex, 1.0), (dup, -dt), (ddn, -dt)]
            e0_terms = [(e_vars["e0"], 1.0)]
            for a in range(SA):
                pc = b.var(0.0, p_hi)
                du = b.var(0.0, np.inf, pa[a] * prices.c_dp[t] * dt)
                dd = b.var(0.0, np.inf, -pa[a] * prices.c_dp[t] * dt)
                idx["pc"][n, j, a], idx["du"][n, j, a], idx["dd"][n, j, a] = pc, du, dd
                link = [(pc, 1.0), (p0, -1.0), (du, 1.0), (dd, -1.0)]
                e0_terms.append((pc, -dt * pa[a] * ev.eta_c))
                if dis:
                    pd = b.var(0.0, -p_lo)
                    mu = b.var(0.0, 1.0)
                    idx["pd"][n, j, a], idx["mu"][n, j, a] = pd, mu
                    binaries.append(mu)
                    link.append((pd, -1.0))
                    b.ub_row([(pc, 1.0), (mu, p_hi)], p_hi)
                    b.ub_row([(pd, 1.0), (mu, p_lo)], 0.0)
                    e0_terms.append((pd, dt * pa[a] / ev.eta_d))
                    flex_terms.append((pd, -dt * pa[a] / ev.eta_d))
                b.eq_row(link, 0.0)
                b.ub_row([(du, 1.0), (dup, -1.0)], 0.0)
                b.ub_row([(dd, 1.0), (ddn, -1.0)], 0.0)
            b.eq_row(flex_terms, 0.0)
            for a in range(SB):
                du = b.var(0.0, np.inf)
                dd = b.var(0.0, np.inf)
                idx["xdu"][n, j, a], idx["xdd"][n, j, a] = du, dd
                b.ub_row([(du, 1.0), (dup, -1.0)], 0.0)
                b.ub_row([(dd, 1.0), (ddn, -1.0)], 0.0)
                b.ub_row([(p0, 1.0), (du, -1.0), (dd, 1.0)], p_hi)
                b.ub_row([(p0, -1.0), (du, 1.0), (dd, -1.0)], -p_lo)
            # boundary deployments
            eu_cuts = []
            if dis:
                pcd, pdd = b.var(0.0, p_hi), b.var(0.0, -p_lo)
                nu_dn = b.var(0.0, 1.0)
                binaries.append(nu_dn)
                for name, v in (("pcd", pcd), ("pdd", pdd), ("nu_dn", nu_dn)):
                    idx[name][n, j] = v
                b.eq_row([(pcd, 1.0), (pdd, -1.0), (p0, -1.0), (ddn, -1.0)], 0.0)
                b.ub_row([(pcd, 1.0), (nu_dn, -p_hi)], 0.0)
                b.ub_row([(pdd, 1.0), (nu_dn, -p_lo)], -p_lo)
                ed_terms = [(e_vars["ed"], 1.0), (pcd, -dt * ev.eta_c), (pdd, dt / ev.eta_d)]
                for rate in (ev.eta_c, 1.0 / ev.eta_d):
                    eu_cuts.append([(e_vars["eu"], 1.0), (p0, -dt * rate), (dup, dt * rate)])
                eu_terms = None
            else:
                eu_terms = [(e_vars["eu"], 1.0), (p0, -dt * ev.eta_c), (dup, dt * ev.eta_c)]
                ed_terms = [(e_vars["ed"], 1.0), (p0, -dt * ev.eta_c), (ddn, -dt * ev.eta_c)]
            for name, terms in (("e0", e0_terms), ("eu", eu_terms), ("ed", ed_terms)):
                rows = eu_cuts if terms is None else [terms]
                for row in rows:
                    emit = b.ub_row if terms is None else b.eq_row
                    if prev[name] is None:
                        emit(row, e_start)
                    else:
                        emit(row + [(prev[name], -1.0)], 0.0)
                prev[name] = e_vars[name]
            b.ub_row([(e_vars["eu"], 1.0), (e_vars["ed"], -1.0)], 0.0)

    # aggregate rows
    for j in range(H):
        on = np.flatnonzero(present[:, j])
        b.eq_row([(idx["P_e"][j], 1.0)] + [(idx["p0"][n, j], -1.0) for n in on], 0.0)
        b.ub_row([(idx["R"][j], 1.0)] + [(idx["dup"][n, j], -1.0) for n in on], 0.0)
        b.ub_row([(idx["R"][j], 1.0)] + [(idx["ddn"][n, j], -1.0) for n in on], 0.0)
        for a in range(SA):
            terms = [(idx["R"][j], sa[a])]
            for n in on:
                terms += [(idx["du"][n, j, a], -1.0), (idx["dd"][n, j, a], 1.0)]
            b.eq_row(terms, 0.0)
        for a in range(SB):
            terms = [(idx["R"][j], sb[a])]
            for n in on:
                terms += [(idx["xdu"][n, j, a], -1.0), (idx["xdd"][n, j, a], 1.0)]
            b.eq_row(terms, 0.0)
    qp = b.build()
    return BiddingProblem(qp, np.array(binaries, dtype=int), idx, list(fleet), tau, H,
                          sa, pa, sb, kmat, present, v2g)


def expected_counts(problem: BiddingProblem) -> tuple[int, int]:
    """Variable and binary counts from the layout formula in the module docstring."""
    SA, SB, H = problem.typical.size, problem.extremes.size, problem.hours
    h = problem.present.sum(axis=1)
    v = problem.v2g.sum(axis=1)
    nvar = 2 * H + int(np.sum(h * (8 + 3 * SA + 2 * SB) + v * (3 + 2 * SA)))
    nbin = int(np.sum(v * (1 + SA)))
    return nvar, nbin


def sign_rounding(problem: BiddingProblem):
    """Binary guess from a relaxed point: each selector follows the sign of its net power."""
    idx = problem.idx

    def rounding(x):
        fix = {}
        n_idx, j_idx = np.nonzero(problem.v2g)
        for n, j in zip(n_idx, j_idx):
            p0 = x[idx["p0"][n, j]]
            fix[idx["nu_dn"][n, j]] = 1.0 if p0 + x[idx["ddn"][n, j]] >= 0 else 0.0
            for a in range(problem.typical.size):
                net = p0 - x[idx["du"][n, j, a]] + x[idx["dd"][n, j, a]]
                fix[idx["mu"][n, j, a]] = 1.0 if net < 0 else 0.0
        return fix

    return rounding


@dataclass
class BidDecision:
    start: int
    P_e: np.ndarray
    R: np.ndarray
    p0: np.ndarray
    dup: np.ndarray
    ddn: np.ndarray
    lam: np.ndarray
    flex: np.ndarray
    e0: np.ndarray
    k: np.ndarray
    present: np.ndarray
    du: np.ndarray
    dd: np.ndarray
    mu: np.ndarray
    objective: float
    status: str
    gap: float = 0.0
    nodes: int = 0


def _take(x, ind):
    out = np.zeros(ind.shape)
    m = ind >= 0
    out[m] = x[ind[m]]
    return out


def solve_bid(problem: BiddingProblem, *, node_limit: int = 50, time_limit: float | None = None,
              gap_tol: float = 1e-6) -> BidDecision:
    sol = solve_miqp(problem.qp, problem.binaries, gap_tol=gap_tol, node_limit=node_limit,
                     time_limit=time_limit, rounding=sign_rounding(problem))
    if sol.x is None:
        hint = _infeasibility_hint(problem)
        raise BidInfeasibleError(f"bidding problem at hour {problem.start} is {sol.status}; {hint}")
    x = sol.x
    idx = problem.idx
    lam = _take(x, idx["lam"])
    lam[problem.k == 0] = 0.0
    lam = np.maximum(lam, 0.0)
    dup = np.maximum(_take(x, idx["dup"]), 0.0)
    ddn = np.maximum(_take(x, idx["ddn"]), 0.0)
    R = np.clip(x[idx["R"]], 0.0, None)
    R = np.minimum(R, np.minimum(dup.sum(axis=0), ddn.sum(axis=0)))
    return BidDecision(
        start=problem.start, P_e=x[idx["P_e"]], R=R, p0=_take(x, idx["p0"]), dup=dup, ddn=ddn,
        lam=lam, flex=_take(x, idx["flex"]), e0=_take(x, idx["e0"]), k=problem.k,
        present=problem.present, du=_take(x, idx["du"]), dd=_take(x, idx["dd"]),
        mu=_take(x, idx["mu"]), objective=sol.objective, status=sol.status, gap=sol.gap,
        nodes=sol.nodes)


def _infeasibility_hint(problem: BiddingProblem) -> str:
    from .optimize import solve_qp
    qp = problem.qp
    # drop the extreme-scenario balance rows and see whether the rest is feasible
    relaxed = QuadraticProgram(c=qp.c, A_eq=None, b_eq=None, A_ub=qp.A_ub, b_ub=qp.b_ub,
                               lb=qp.lb, ub=qp.ub, Q=qp.Q)
    if solve_qp(relaxed).status == "optimal":
        return "the balance/energy equalities (extreme-scenario hours included) cannot be met"
    return "per-EV bounds alone are inconsistent"


@dataclass
class HourCommitment:
    hour: int
    P_e: float
    R: float
    ids: list
    p0: np.ndarray
    dup: np.ndarray
    ddn: np.ndarray
    lam: np.ndarray
    k: np.ndarray
    xi: np.ndarray
    flex: np.ndarray
    eta_d: np.ndarray
    eta_c: np.ndarray
    p_lo: np.ndarray
    p_hi: np.ndarray
    present: np.ndarray
    e0_next: np.ndarray
    extra: dict = field(default_factory=dict)


def commitment_from(decision: BidDecision, fleet) -> HourCommitment:
    t = decision.start
    p_lo = np.array([power_envelope(ev, t + 1)[0][t] for ev in fleet])
    p_hi = np.array([power_envelope(ev, t + 1)[1][t] for ev in fleet])
    return HourCommitment(
        hour=t, P_e=float(decision.P_e[0]), R=float(decision.R[0]), ids=[ev.id for ev in fleet],
        p0=decision.p0[:, 0].copy(), dup=decision.dup[:, 0].copy(), ddn=decision.ddn[:, 0].copy(),
        lam=decision.lam[:, 0].copy(), k=decision.k[:, 0].copy(),
        xi=np.array([ev.xi if decision.present[n, 0] else 0.0 for n, ev in enumerate(fleet)]),
        flex=decision.flex[:, 0].copy(), eta_d=np.array([ev.eta_d for ev in fleet]),
        eta_c=np.array([ev.eta_c for ev in fleet]), p_lo=p_lo, p_hi=p_hi,
        present=decision.present[:, 0].copy(), e0_next=decision.e0[:, 0].copy(),
        extra={"gap": decision.gap, "status": decision.status, "objective": decision.objective})


def mpc_step(state: EvaState, fleet, prices: MarketPrices, scenarios: ScenarioSet,
             mileage_forecast=None, **solve_kw):
    """Solve the remaining-day problem and commit its first hour."""
    if state.hour >= prices.hours:
        raise ValueError("no hours left to bid")
    prob = compile_bidding(fleet, prices, scenarios, state, mileage_forecast=mileage_forecast)
    dec = solve_bid(prob, **solve_kw)
    return commitment_from(dec, fleet), dec


ENERGY_DECIMALS = 9


def update_state(state: EvaState, fleet, charge_kwh, discharge_kwh, s_last: float | None = None,
                 dt: float = DT) -> EvaState:
    """Advance one hour: e += eta_c * charged - discharged / eta_d, clamped to the envelope."""
    e = state.energy.copy()
    t1 = state.hour + 1
    for n, ev in enumerate(fleet):
        if not ev.present(state.hour):
            if ev.t_arrive == t1:
                e[n] = ev.e_arrive
            continue
        # metered at 1e-9 kWh so solver round-off cannot steer later bids
        e[n] = round(e[n] + ev.eta_c * charge_kwh[n] - discharge_kwh[n] / ev.eta_d, ENERGY_DECIMALS)
        lo, hi = energy_envelope(ev, max(T, t1), dt)
        lo, hi = lo[t1], hi[t1]
        if e[n] < lo - STATE_TOL or e[n] > hi + STATE_TOL:
            log.warning("EV %s: energy %.6f outside [%.6f, %.6f] at hour %d, clamped", ev.id, e[n], lo, hi, t1)
        e[n] = min(max(e[n], lo), hi)
    return EvaState(t1, e, state.s_prev if s_last is None else float(s_last))


BID_COLUMNS = ["kind", "hour", "id", "P_e_kw", "R_kw", "p0_kw", "dup_kw", "ddn_kw", "lambda", "flex_kwh", "k"]


def write_bid_report(commits, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BID_COLUMNS)
        for c in commits:
            w.writerow(["hour", c.hour, "", repr(c.P_e), repr(c.R), "", "", "", "", "", ""])
            for n in np.flatnonzero(c.present):
                w.writerow(["ev", c.hour, c.ids[n], "", "", repr(float(c.p0[n])), repr(float(c.dup[n])),
                            repr(float(c.ddn[n])), repr(float(c.lam[n])), repr(float(c.flex[n])),
                            repr(float(c.k[n]))])


def read_bid_report(path, fleet, hour: int | None = None) -> HourCommitment:
    """Rebuild one hour's commitment from a bid report and the fleet file."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    hours = sorted({int(r["hour"]) for r in rows if r["kind"] == "hour"})
    if not hours:
        raise ValueError(f"{path}: no hour rows")
    if hour is None:
        hour = hours[0]
    if hour not in hours:
        raise ValueError(f"{path}: hour {hour} not in report (has {hours})")
    head = next(r for r in rows if r["kind"] == "hour" and int(r["hour"]) == hour)
    pos = {ev.id: n for n, ev in enumerate(fleet)}
    N = len(fleet)
    arr = {k: np.zeros(N) for k in ("p0", "dup", "ddn", "lam", "flex", "k")}
    present = np.zeros(N, dtype=bool)
    for r in rows:
        if r["kind"] != "ev" or int(r["hour"]) != hour:
            continue
        if r["id"] not in pos:
            raise ValueError(f"{path}: EV {r['id']} is not in the fleet")
        n = pos[r["id"]]
        present[n] = True
        for k, col in (("p0", "p0_kw"), ("dup", "dup_kw"), ("ddn", "ddn_kw"), ("lam", "lambda"),
                       ("flex", "flex_kwh"), ("k", "k")):
            arr[k][n] = float(r[col])
    p_lo = np.array([power_envelope(ev, hour + 1)[0][hour] for ev in fleet])
    p_hi = np.array([power_envelope(ev, hour + 1)[1][hour] for ev in fleet])
    return HourCommitment(
        hour=hour, P_e=float(head["P_e_kw"]), R=float(head["R_kw"]), ids=[ev.id for ev in fleet],
        p0=arr["p0"], dup=arr["dup"], ddn=arr["ddn"], lam=arr["lam"], k=arr["k"],
        xi=np.array([ev.xi if present[n] else 0.0 for n, ev in enumerate(fleet)]), flex=arr["flex"],
        eta_d=np.array([ev.eta_d for ev in fleet]), eta_c=np.array([ev.eta_c for ev in fleet]),
        p_lo=p_lo, p_hi=p_hi, present=present, e0_next=np.zeros(N))

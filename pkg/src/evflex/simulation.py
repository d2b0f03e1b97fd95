"""Full-day receding-horizon run: bid, precompute regions, replay signals, settle."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .bidding import EvaState, HourCommitment, mpc_step, update_state
from .dispatch import (NV, DirectDispatcher, DispatchProblem, RelaxationError, build_dispatch_lp,
                       compute_regions, lookup, true_costs)
from .evaluation import METHODS, _allocations, fairness_population, jain_index
from .fleet import DT, power_envelope
from .market import CashFlow, MarketPrices, settle_hour
from .scenarios import ScenarioSet, SignalTrace

log = logging.getLogger(__name__)

BALANCE_TOL = 1e-8
DEPARTURE_TOL = 1e-6


class SimulationError(RuntimeError):
    def __init__(self, stage: str, hour: int, cause: Exception):
        super().__init__(f"{stage} failed at hour {hour}: {cause}")
        self.stage, self.hour, self.cause = stage, hour, cause


@dataclass
class SimOptions:
    node_limit: int = 8
    time_limit: float | None = None
    gap_tol: float = 1e-6
    dispatch_mode: str = "lookup"  # lookup | direct
    compare: bool = True
    start_hour: int = 0


@dataclass
class HourLog:
    hour: int
    n_present: int
    mode: str
    n_regions: int = 0
    build_seconds: float = 0.0
    bid_status: str = ""
    bid_gap: float = 0.0
    bid_seconds: float = 0.0
    balance_error: float = 0.0
    latencies: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class DayResult:
    ids: list
    commits: list
    cash: CashFlow
    energy: np.ndarray  # (hours + 1, N) energy at hour boundaries
    power: np.ndarray  # (hours, N) hourly mean net power
    logs: list
    policies: dict
    method_cost: dict
    method_comp: dict  # per-EV compensation summed over the day
    fairness_members: np.ndarray
    shortfall: np.ndarray  # required minus delivered energy at departure, per EV

    @property
    def latencies(self) -> np.ndarray:
        parts = [h.latencies for h in self.logs if h.latencies.size]
        return np.concatenate(parts) if parts else np.zeros(0)

    @property
    def departure_ok(self) -> bool:
        return bool(np.all(self.shortfall <= DEPARTURE_TOL))

    @property
    def max_balance_error(self) -> float:
        return max((h.balance_error for h in self.logs), default=0.0)

    def comparison(self) -> dict:
        """Day-level EVA cost and Jain index per dispatch protocol."""
        out = {}
        for m in self.method_cost:
            x = self.method_comp[m][self.fairness_members]
            j = jain_index(x) if x.size and x.any() else 1.0
            out[m] = (self.method_cost[m], j)
        return out


def _idle_commitment(fleet, hour) -> HourCommitment:
    n = len(fleet)
    z = np.zeros(n)
    p_lo = np.array([power_envelope(ev, hour + 1)[0][hour] for ev in fleet])
    p_hi = np.array([power_envelope(ev, hour + 1)[1][hour] for ev in fleet])
    return HourCommitment(hour, 0.0, 0.0, [ev.id for ev in fleet], z, z.copy(), z.copy(), z.copy(),
                          z.copy(), z.copy(), z.copy(), np.array([ev.eta_d for ev in fleet]),
                          np.array([ev.eta_c for ev in fleet]), p_lo, p_hi, np.zeros(n, dtype=bool),
                          z.copy(), {"status": "idle", "gap": 0.0})


class _Replayer:
    """Answers one hour's signals by region lookup, or by direct solves."""

    def __init__(self, problem: DispatchProblem, mode: str):
        self.problem = problem
        self.policy = None
        self.mode = mode
        if mode == "lookup":
            try:
                self.policy = compute_regions(build_dispatch_lp(problem, certify=True))
            except RelaxationError as exc:
                log.warning("hour falls back to direct dispatch: %s", exc)
                self.mode = "direct"
        if self.mode == "direct":
            self.direct = DirectDispatcher(problem)

    def run(self, signals):
        D, n = len(signals), self.problem.n
        X = np.empty((D, NV * n))
        lat = np.empty(D)
        clock = time.perf_counter
        if self.mode == "lookup":
            pol = self.policy
            for d, s in enumerate(signals):
                t0 = clock()
                r = lookup(pol, s)
                lat[d] = clock() - t0
                X[d, 0::NV], X[d, 1::NV], X[d, 2::NV], X[d, 3::NV] = r.pc, r.pd, r.dup, r.ddn
        else:
            for d, s in enumerate(signals):
                t0 = clock()
                r = self.direct.solve(s)
                lat[d] = clock() - t0
                X[d, 0::NV], X[d, 1::NV], X[d, 2::NV], X[d, 3::NV] = r.pc, r.pd, r.dup, r.ddn
        return X, lat


def simulate_day(fleet, prices: MarketPrices, trace: SignalTrace, scenarios: ScenarioSet,
                 mileage_forecast=None, options: SimOptions | None = None, dt: float = DT,
                 progress=None) -> DayResult:
    """Run hours ``options.start_hour .. prices.hours - 1`` sequentially.

    Every hour: solve the remaining-day bid and commit its first hour, build the
    dispatch policy, answer that hour's signals, settle, and advance each EV's
    energy by what it actually charged and discharged.
    """
    opt = options or SimOptions()
    if opt.dispatch_mode not in ("lookup", "direct"):
        raise ValueError(f"unknown dispatch mode {opt.dispatch_mode!r}")
    H = prices.hours
    if trace.hours < H:
        raise ValueError(f"signal trace covers {trace.hours} h, need {H}")
    N = len(fleet)
    state = EvaState.initial(fleet)
    state.hour = opt.start_hour
    energy = np.full((H + 1, N), np.nan)
    energy[opt.start_hour] = state.energy
    power = np.zeros((H, N))
    cash = CashFlow()
    commits, logs, policies = [], [], {}
    cost = {m: 0.0 for m in METHODS}
    comp = {m: np.zeros(N) for m in METHODS}
    members = np.zeros(N, dtype=bool)
    w = trace.dt_sub / 3600.0

    for tau in range(opt.start_hour, H):
        signals = trace.hour(tau)
        present = np.array([ev.present(tau) for ev in fleet], dtype=bool)
        entry = HourLog(tau, int(present.sum()), "idle")
        charge = np.zeros(N)
        discharge = np.zeros(N)
        if not present.any():
            commit = _idle_commitment(fleet, tau)
            X = np.zeros((len(signals), 0))
            prob = None
        else:
            t0 = time.perf_counter()
            try:
                commit, dec = mpc_step(state, fleet, prices, scenarios, mileage_forecast,
                                       node_limit=opt.node_limit, time_limit=opt.time_limit,
                                       gap_tol=opt.gap_tol)
            except Exception as exc:
                raise SimulationError("bidding", tau, exc) from exc
            entry.bid_seconds = time.perf_counter() - t0
            entry.bid_status, entry.bid_gap = dec.status, float(dec.gap)
            commit.extra["c_dp"] = float(prices.c_dp[tau])
            try:
                prob = DispatchProblem.from_commitment(commit, c_dp=prices.c_dp[tau])
                t0 = time.perf_counter()
                rep = _Replayer(prob, opt.dispatch_mode)
                entry.build_seconds = time.perf_counter() - t0
                entry.mode = rep.mode
                if rep.policy is not None:
                    policies[tau] = rep.policy
                    entry.n_regions = len(rep.policy.regions)
            except Exception as exc:
                raise SimulationError("regions", tau, exc) from exc
            try:
                X, entry.latencies = rep.run(signals)
            except Exception as exc:
                raise SimulationError("dispatch", tau, exc) from exc
            agg = X[:, 0::NV].sum(axis=1) - X[:, 1::NV].sum(axis=1)
            entry.balance_error = float(np.abs(agg - (prob.P_hat - signals * prob.R_hat)).max(initial=0.0))
            if entry.balance_error > BALANCE_TOL:
                log.warning("hour %d: aggregate power off target by %.3e kW", tau, entry.balance_error)
            on = prob.members
            charge[on] = X[:, 0::NV].mean(axis=0) * dt
            discharge[on] = X[:, 1::NV].mean(axis=0) * dt
            power[tau, on] = (X[:, 0::NV] - X[:, 1::NV]).mean(axis=0)
            if opt.compare:
                c_true = true_costs(prob)
                pop = fairness_population(prob)
                members[on[pop]] = True
                for m in METHODS:
                    Xm = X if m == "proposed" else _allocations(prob, signals, m)
                    cost[m] += float((Xm @ c_true).sum() * w)
                    comp[m][on] += prob.lam * (Xm[:, 2::NV] + Xm[:, 3::NV]).sum(axis=0) * w
        commits.append(commit)
        alloc = _full_alloc(X, prob, N)
        try:
            cash.add(settle_hour(tau, commit, signals, alloc, prices, state.s_prev, dt))
        except Exception as exc:
            raise SimulationError("settlement", tau, exc) from exc
        state = update_state(state, fleet, charge, discharge, float(signals[-1]) if len(signals) else None, dt)
        energy[tau + 1] = state.energy
        logs.append(entry)
        if progress is not None:
            progress(entry)

    shortfall = np.zeros(N)
    for n, ev in enumerate(fleet):
        if ev.t_depart <= H and ev.t_depart >= opt.start_hour:
            shortfall[n] = ev.e_required - energy[ev.t_depart, n]
    if np.any(shortfall > DEPARTURE_TOL):
        bad = [fleet[n].id for n in np.flatnonzero(shortfall > DEPARTURE_TOL)]
        log.warning("departure energy short for %s", bad)
    return DayResult([ev.id for ev in fleet], commits, cash, energy, power, logs, policies, cost, comp,
                     np.flatnonzero(members), shortfall)


def _full_alloc(X, prob, N):
    """Scatter (D, 4n) member set-points back to (D, N) arrays for settlement."""
    D = X.shape[0]
    out = {k: np.zeros((D, N)) for k in ("pc", "pd", "dup", "ddn")}
    if prob is not None:
        for j, k in enumerate(("pc", "pd", "dup", "ddn")):
            out[k][:, prob.members] = X[:, j::NV]
    return out

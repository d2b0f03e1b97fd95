"""Fairness metric and the four-way dispatch comparison."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dispatch import (NV, DispatchProblem, baseline_allocations, build_dispatch_lp, compute_regions,
                       lookup_many, true_costs)

METHODS = ("proposed", "proportional", "round_robin", "max_fairness")


def jain_index(x) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size == 0:
        raise ValueError("Jain index of an empty vector")
    if np.any(x < 0):
        raise ValueError("Jain index needs nonnegative entries")
    s2 = float(np.dot(x, x))
    if s2 == 0:
        raise ValueError("Jain index is undefined for an all-zero vector")
    return float(x.sum() ** 2 / (x.size * s2))


@dataclass
class ComparisonReport:
    eva_cost: dict
    jain: dict
    per_ev_cost: dict
    population: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def rows(self):
        return [(m, self.eva_cost[m], self.jain[m]) for m in self.eva_cost]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "eva_cost", "jain_index"])
            for m, c, j in self.rows():
                w.writerow([m, repr(float(c)), repr(float(j))])


def fairness_population(problem: DispatchProblem) -> np.ndarray:
    """EVs that are paid for flexibility and hold a reserve range this hour."""
    return np.flatnonzero((problem.lam > 0) & (problem.dup + problem.ddn > 0))


def _allocations(problem, signals, method, policy=None):
    """(D, 4N) set-points for every signal under one protocol."""
    D = len(signals)
    if method == "proposed":
        if policy is None:
            policy = compute_regions(build_dispatch_lp(problem))
        X, _ = lookup_many(policy, signals)
        return X
    X = np.empty((D, NV * problem.n))
    if method == "max_fairness":
        # hindsight over the hour: large requests are nearly forced onto the
        # caps, so place them first and let small ones even out the accounts
        cum = np.zeros(problem.n)
        for d in np.argsort(-np.abs(signals), kind="stable"):
            r = baseline_allocations(problem, signals[d], method, cumulative=cum)
            cum = cum + problem.lam * (r.dup + r.ddn)
            X[d, 0::NV], X[d, 1::NV], X[d, 2::NV], X[d, 3::NV] = r.pc, r.pd, r.dup, r.ddn
        return X
    for d, s in enumerate(signals):
        r = baseline_allocations(problem, s, method)
        X[d, 0::NV], X[d, 1::NV], X[d, 2::NV], X[d, 3::NV] = r.pc, r.pd, r.dup, r.ddn
    return X


def compare_dispatch_methods(problem: DispatchProblem, signals, dt_sub: float = 2.0,
                             policy=None, methods=METHODS) -> ComparisonReport:
    """EVA cost (sum of per-signal dispatch costs over the hour) and Jain index
    of per-EV deployment compensation for each allocation protocol."""
    signals = np.asarray(signals, dtype=float)
    w = dt_sub / 3600.0
    c = true_costs(problem)
    pop = fairness_population(problem)
    cost, jain, per_ev = {}, {}, {}
    for m in methods:
        X = _allocations(problem, signals, m, policy)
        cost[m] = float((X @ c).sum() * w)
        dep = (X[:, 2::NV] + X[:, 3::NV]).sum(axis=0) * w
        comp = problem.lam * dep
        per_ev[m] = comp
        sub = comp[pop]
        jain[m] = jain_index(sub) if sub.size and sub.any() else 1.0
    return ComparisonReport(cost, jain, per_ev, pop)

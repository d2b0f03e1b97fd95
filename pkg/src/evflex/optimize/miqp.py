"""Branch-and-bound for convex QPs with binary variables.

Depth-first search on the most fractional binary, with a periodic jump to the
open node of lowest bound.  Integral points are always re-solved with every
binary fixed so the incumbent is exactly integral.
"""
from __future__ import annotations

import logging
import time
from dataclasses import replace

import numpy as np

from .problems import QuadraticProgram, Solution
from .qp import solve_qp

log = logging.getLogger(__name__)

INT_TOL = 1e-6


def _with_bounds(qp, lb, ub):
    out = replace(qp, lb=lb, ub=ub, Q=qp.Q)
    return out


def solve_miqp(qp: QuadraticProgram, binary_indices, *, gap_tol: float = 1e-6,
               node_limit: int = 5000, time_limit: float | None = None,
               rounding=None, heuristic_every: int = 10, restart_every: int = 25,
               qp_tol: float = 1e-10) -> Solution:
    """Minimise ``qp`` with ``x[binary_indices]`` in {0, 1}.

    ``rounding(x_relaxed) -> dict[index, 0|1]`` may propose a full fixing of
    the binaries; it is tried at the root and every ``heuristic_every`` nodes.
    """
    bins = np.asarray(sorted(set(int(i) for i in binary_indices)), dtype=int)
    lb0 = qp.lb.copy()
    ub0 = qp.ub.copy()
    lb0[bins] = np.maximum(lb0[bins], 0.0)
    ub0[bins] = np.minimum(ub0[bins], 1.0)
    # integral bounds on binaries
    lb0[bins] = np.ceil(lb0[bins] - 1e-9)
    ub0[bins] = np.floor(ub0[bins] + 1e-9)
    if np.any(lb0 > ub0):
        return Solution("infeasible")

    start = time.perf_counter()
    best = None
    best_val = np.inf
    history = []
    nodes = 0
    tried = set()

    def try_fixing(lb, ub, values):
        nonlocal best, best_val
        key = tuple(int(v) for v in values)
        if key in tried:
            return
        tried.add(key)
        lbf, ubf = lb.copy(), ub.copy()
        vals = np.asarray(values, dtype=float)
        if np.any(vals < lb[bins]) or np.any(vals > ub[bins]):
            return
        lbf[bins] = vals
        ubf[bins] = vals
        sol = solve_qp(_with_bounds(qp, lbf, ubf), tol=qp_tol)
        if sol.optimal and sol.objective < best_val - 1e-12:
            sol.x[bins] = vals
            best, best_val = sol, sol.objective
            history.append(best_val)

    # open list entries: (parent bound, seq, lb, ub)
    open_nodes = [(-np.inf, 0, lb0, ub0)]
    seq = 1
    status = "optimal"
    while open_nodes:
        if nodes >= node_limit or (time_limit is not None and time.perf_counter() - start > time_limit):
            status = "node_limit"
            break
        if restart_every and nodes and nodes % restart_every == 0:
            k = min(range(len(open_nodes)), key=lambda i: (open_nodes[i][0], open_nodes[i][1]))
            bound, _, lb, ub = open_nodes.pop(k)
        else:
            bound, _, lb, ub = open_nodes.pop()
        if bound >= best_val - gap_tol:
            continue
        nodes += 1
        sol = solve_qp(_with_bounds(qp, lb, ub), tol=qp_tol)
        if not sol.optimal:
            continue
        if sol.objective >= best_val - gap_tol:
            continue
        xb = sol.x[bins]
        frac = np.abs(xb - np.round(xb))
        if rounding is not None and (nodes == 1 or nodes % heuristic_every == 0):
            prop = rounding(sol.x.copy())
            if prop is not None:
                vals = np.round(xb)
                pos = {int(b): i for i, b in enumerate(bins)}
                for idx, v in prop.items():
                    if int(idx) in pos:
                        vals[pos[int(idx)]] = v
                vals = np.clip(vals, lb[bins], ub[bins])
                try_fixing(lb, ub, vals)
        if frac.max(initial=0.0) <= INT_TOL:
            try_fixing(lb, ub, np.round(xb))
            continue
        # most fractional, lowest index on ties
        j = int(np.argmax(frac))
        v = bins[j]
        lo_lb, lo_ub = lb.copy(), ub.copy()
        lo_ub[v] = 0.0
        hi_lb, hi_ub = lb.copy(), ub.copy()
        hi_lb[v] = 1.0
        down = (sol.objective, seq, lo_lb, lo_ub)
        up = (sol.objective, seq + 1, hi_lb, hi_ub)
        seq += 2
        # child nearer the relaxed value is explored first
        if xb[j] >= 0.5:
            open_nodes += [down, up]
        else:
            open_nodes += [up, down]
        if rounding is None and nodes == 1:
            try_fixing(lb, ub, np.round(xb))

    lower = min([n[0] for n in open_nodes], default=best_val) if status != "optimal" else best_val
    if best is None:
        if status == "optimal":
            return Solution("infeasible", nodes=nodes)
        return Solution("node_limit", nodes=nodes, gap=np.inf, incumbent_history=history)
    gap = max(0.0, best_val - lower) if np.isfinite(lower) else np.inf
    best.status = status
    best.nodes = nodes
    best.gap = gap
    best.incumbent_history = history
    if status == "node_limit":
        log.info("branch-and-bound stopped at %d nodes, gap %.3g", nodes, gap)
    return best

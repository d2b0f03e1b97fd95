"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or configuration, 2 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import bidding, dispatch
from .fleet import T, ConfigError, FeasibilityError, FleetConfig, energy_envelope, read_fleet_csv, sample_fleet, write_fleet_csv
from .market import PriceFileError, load_prices, synthetic_prices, write_prices
from .optimize import SolverError
from .scenarios import bin_signals, forecast_mileage, hourly_mileage, read_trace_csv, synthetic_regd_trace, write_trace_csv
from .simulation import SimOptions, SimulationError, simulate_day

log = logging.getLogger("evflex")

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2
HISTORY_DAYS = 5
RUN_FILES = ("fleet.csv", "bids.csv", "settlement.csv", "energy.csv", "comparison.csv", "hours.csv")


class ValidationError(ValueError):
    pass


@dataclass
class RunConfig:
    fleet: str | None = None
    prices: str | None = None
    trace: str | None = None
    history: str | None = None
    out: str = "run"
    n: int = 100
    seed: int = 0
    v2g: bool = True
    bin_width: float = 0.2
    node_limit: int = 8
    gap_tol: float = 1e-6
    time_limit: float | None = None
    c_dp: float | None = None
    dispatch_mode: str = "lookup"
    start_hour: int = 0
    compare: bool = True
    hour: int | None = None
    signal: float = 0.0
    bid: str | None = None
    policy: str | None = None
    fleet_dists: dict = field(default_factory=dict)

    def check_inputs(self, *names):
        for name in names:
            p = getattr(self, name)
            if p is not None and not Path(p).is_file():
                raise ValidationError(f"{name} file not found: {p}")
        if self.bin_width <= 0 or self.bin_width > 2:
            raise ValidationError("bin_width must lie in (0, 2]")
        if self.dispatch_mode not in ("lookup", "direct"):
            raise ValidationError(f"unknown dispatch mode {self.dispatch_mode!r}")


def load_config(path, overrides: dict) -> RunConfig:
    """Config file values, then command-line flags on top."""
    data = {}
    if path:
        if not Path(path).is_file():
            raise ValidationError(f"config file not found: {path}")
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: expected a mapping at top level")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValidationError(f"unknown config keys: {unknown}")
    data.update({k: v for k, v in overrides.items() if v is not None and k in known})
    try:
        return RunConfig(**data)
    except TypeError as exc:
        raise ValidationError(str(exc)) from exc


# input assembly ---------------------------------------------------------------

def _fleet(cfg: RunConfig):
    if cfg.fleet:
        return read_fleet_csv(cfg.fleet)
    return sample_fleet(FleetConfig(n=cfg.n, seed=cfg.seed, v2g=cfg.v2g, dists=cfg.fleet_dists))


def _prices(cfg: RunConfig):
    prices = load_prices(cfg.prices) if cfg.prices else synthetic_prices(cfg.seed)
    return prices if cfg.c_dp is None else prices.with_c_dp(cfg.c_dp)


def _history(cfg: RunConfig):
    if cfg.history:
        return read_trace_csv(cfg.history)
    return synthetic_regd_trace(T * HISTORY_DAYS, seed=cfg.seed + 2000)


def _trace(cfg: RunConfig):
    if cfg.trace:
        return read_trace_csv(cfg.trace)
    return synthetic_regd_trace(T, seed=cfg.seed + 1000)


def _market_view(cfg: RunConfig):
    hist = _history(cfg)
    days = hist.hours // T
    if days == 0:
        raise ValidationError("signal history must cover at least one day")
    m = hourly_mileage(hist)[:days * T].reshape(days, T)
    return bin_signals(hist, cfg.bin_width), forecast_mileage(m)


# commands ---------------------------------------------------------------------

def cmd_generate(cfg: RunConfig, args) -> None:
    cfg.check_inputs()
    fleet = _fleet(cfg)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_fleet_csv(fleet, out)
    if args.inputs:
        d = Path(args.inputs)
        d.mkdir(parents=True, exist_ok=True)
        write_prices(synthetic_prices(cfg.seed), d / "prices.csv")
        write_trace_csv(synthetic_regd_trace(T, seed=cfg.seed + 1000), d / "trace.csv")
        write_trace_csv(synthetic_regd_trace(T * HISTORY_DAYS, seed=cfg.seed + 2000), d / "history.csv")
    print(f"wrote {len(fleet)} EVs to {out}")


def _state_at(fleet, hour):
    """Arrival energies projected into each EV's envelope at ``hour``."""
    st = bidding.EvaState.initial(fleet)
    st.hour = hour
    for n, ev in enumerate(fleet):
        if ev.t_arrive < hour:
            lo, hi = energy_envelope(ev, max(T, hour + 1))
            st.energy[n] = min(max(st.energy[n], lo[hour]), hi[hour])
    return st


def cmd_bid(cfg: RunConfig, args) -> None:
    cfg.check_inputs("fleet", "prices", "history")
    fleet = _fleet(cfg)
    prices = _prices(cfg)
    hour = cfg.hour or 0
    if not 0 <= hour < prices.hours:
        raise ValidationError(f"hour must lie in [0, {prices.hours})")
    scen, mhat = _market_view(cfg)
    commit, dec = bidding.mpc_step(_state_at(fleet, hour), fleet, prices, scen, mhat,
                                   node_limit=cfg.node_limit, time_limit=cfg.time_limit, gap_tol=cfg.gap_tol)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    bidding.write_bid_report([commit], out)
    print(f"hour {hour}: P_e={commit.P_e:.6f} kW R={commit.R:.6f} kW ({dec.status}, gap {dec.gap:.3g})")


def cmd_regions(cfg: RunConfig, args) -> None:
    cfg.check_inputs("bid", "fleet", "prices")
    if not cfg.bid:
        raise ValidationError("--bid is required")
    fleet = _fleet(cfg)
    prices = _prices(cfg)
    commit = bidding.read_bid_report(cfg.bid, fleet, cfg.hour)
    prob = dispatch.DispatchProblem.from_commitment(commit, c_dp=prices.c_dp[commit.hour])
    pol = dispatch.compute_regions(dispatch.build_dispatch_lp(prob, certify=True))
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    dispatch.write_policy_csv(pol, out)
    print(f"hour {commit.hour}: {len(pol.regions)} critical regions written to {out}")


def cmd_dispatch(cfg: RunConfig, args) -> None:
    cfg.check_inputs("policy")
    if not cfg.policy:
        raise ValidationError("--policy is required")
    pol = dispatch.read_policy_csv(cfg.policy)
    r = dispatch.lookup(pol, cfg.signal)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["id", "pc_kw", "pd_kw", "dup_kw", "ddn_kw"])
    for i, ev_id in enumerate(pol.ids):
        w.writerow([ev_id, repr(float(r.pc[i])), repr(float(r.pd[i])), repr(float(r.dup[i])), repr(float(r.ddn[i]))])
    w.writerow(["value", repr(r.value), "", "", ""])


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    return repr(float(v)) if np.isfinite(v) else ""


def cmd_simulate(cfg: RunConfig, args) -> None:
    cfg.check_inputs("fleet", "prices", "trace", "history")
    fleet = _fleet(cfg)
    prices = _prices(cfg)
    trace = _trace(cfg)
    scen, mhat = _market_view(cfg)
    out = Path(cfg.out)
    try:
        (out / "policies").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ValidationError(f"output directory {out} is not writable")
    opts = SimOptions(node_limit=cfg.node_limit, time_limit=cfg.time_limit, gap_tol=cfg.gap_tol,
                      dispatch_mode=cfg.dispatch_mode, compare=cfg.compare, start_hour=cfg.start_hour)

    def progress(h):
        log.info("hour %d: %d EVs, %s, %d regions, bid %s gap %.3g", h.hour, h.n_present, h.mode,
                 h.n_regions, h.bid_status or "-", h.bid_gap)

    res = simulate_day(fleet, prices, trace, scen, mhat, opts, progress=progress)
    write_fleet_csv(fleet, out / "fleet.csv")
    bidding.write_bid_report(res.commits, out / "bids.csv")
    res.cash.write_csv(out / "settlement.csv")
    ids = res.ids
    _write_csv(out / "energy.csv", ["hour"] + ids,
               [[h] + [_fmt(v) for v in res.energy[h]] for h in range(res.energy.shape[0])])
    _write_csv(out / "power.csv", ["hour"] + ids,
               [[h] + [_fmt(v) for v in res.power[h]] for h in range(res.power.shape[0])])
    _write_csv(out / "comparison.csv", ["method", "eva_cost", "jain_index"],
               [[m, repr(c), repr(j)] for m, (c, j) in res.comparison().items()])
    _write_csv(out / "hours.csv", ["hour", "n_present", "mode", "n_regions", "bid_status", "bid_gap",
                                   "balance_error_kw"],
               [[h.hour, h.n_present, h.mode, h.n_regions, h.bid_status, repr(h.bid_gap), repr(h.balance_error)]
                for h in res.logs])
    for hour, pol in res.policies.items():
        dispatch.write_policy_csv(pol, out / "policies" / f"hour_{hour:02d}.csv")
    # wall-clock figures vary run to run, so they live apart from the artifacts
    lat = res.latencies
    with open(out / "timing.log", "w") as fh:
        for h in res.logs:
            if h.latencies.size:
                fh.write(f"hour {h.hour} bid_s {h.bid_seconds:.3f} regions_s {h.build_seconds:.4f} "
                         f"lookup_median_us {np.median(h.latencies) * 1e6:.2f} "
                         f"lookup_max_us {h.latencies.max() * 1e6:.2f}\n")
        if lat.size:
            fh.write(f"all signals {lat.size} median_us {np.median(lat) * 1e6:.2f} "
                     f"total_s {lat.sum():.4f}\n")
    _report(out)
    short = res.shortfall
    if not res.departure_ok:
        bad = [ids[n] for n in np.flatnonzero(short > 1e-6)]
        raise SimulationError("departure check", prices.hours, RuntimeError(f"energy short for {bad}"))
    print(f"simulated {len(fleet)} EVs; net cost {res.cash.totals()['net_cost']:.6f} $; "
          f"max balance error {res.max_balance_error:.2e} kW; artifacts in {out}")


def _read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _report(run: Path) -> None:
    missing = [f for f in RUN_FILES if not (run / f).is_file()]
    if missing:
        raise ValidationError(f"{run}: missing run artifacts {missing}")
    fleet = read_fleet_csv(run / "fleet.csv")
    bids = _read_rows(run / "bids.csv")
    settle = _read_rows(run / "settlement.csv")
    energy = _read_rows(run / "energy.csv")
    comp = _read_rows(run / "comparison.csv")
    power = _read_rows(run / "power.csv") if (run / "power.csv").is_file() else []

    hourly = [r for r in bids if r["kind"] == "hour"]
    _write_csv(run / "plot_hourly_bids.csv", ["hour", "P_e_kw", "R_kw"],
               [[r["hour"], r["P_e_kw"], r["R_kw"]] for r in hourly])
    total = next(r for r in settle if r["hour"] == "total")
    comps = ["energy_cost", "regulation_credit", "flex_payment", "charging_income", "redispatch_cost", "net_cost"]
    _write_csv(run / "plot_revenue_costs.csv", ["hour"] + comps,
               [[r["hour"]] + [r[c] for c in comps] for r in settle])

    alphas = sorted({ev.alpha for ev in fleet})
    flex_by = {a: 0.0 for a in alphas}
    alpha_of = {ev.id: ev.alpha for ev in fleet}
    for r in bids:
        if r["kind"] == "ev":
            flex_by[alpha_of[r["id"]]] += float(r["flex_kwh"])
    _write_csv(run / "plot_flex_by_class.csv", ["alpha", "flex_kwh"], [[repr(a), repr(flex_by[a])] for a in alphas])

    rows = []
    for r_e in energy:
        h = int(r_e["hour"])
        for a in alphas:
            evs = [ev for ev in fleet if ev.alpha == a and ev.t_arrive <= h <= ev.t_depart and r_e[ev.id] != ""]
            soc = [float(r_e[ev.id]) / ev.battery_kwh for ev in evs]
            pw = [float(power[h][ev.id]) for ev in evs if h < len(power) and ev.present(h)]
            rows.append([h, repr(a), len(soc), repr(float(np.mean(soc))) if soc else "",
                         repr(float(np.mean(pw))) if pw else ""])
    _write_csv(run / "plot_soc_by_class.csv", ["hour", "alpha", "n_ev", "mean_soc", "mean_power_kw"], rows)
    _write_csv(run / "plot_fairness.csv", ["method", "eva_cost", "jain_index"],
               [[r["method"], r["eva_cost"], r["jain_index"]] for r in comp])

    lines = [f"fleet: {len(fleet)} EVs",
             f"hours with bids: {len(hourly)}",
             "daily totals ($):"]
    lines += [f"  {c}: {float(total[c]):.6f}" for c in comps]
    lines.append("procured flexibility by preference class (kWh):")
    lines += [f"  alpha={a:g}: {flex_by[a]:.6f}" for a in alphas]
    lines.append("dispatch comparison (EVA cost $, Jain index):")
    lines += [f"  {r['method']}: {float(r['eva_cost']):.6f}, {float(r['jain_index']):.6f}" for r in comp]
    (run / "summary.txt").write_text("\n".join(lines) + "\n")


def cmd_report(cfg: RunConfig, args) -> None:
    run = Path(args.run_dir)
    if not run.is_dir():
        raise ValidationError(f"run directory not found: {run}")
    _report(run)
    print((run / "summary.txt").read_text(), end="")


def cmd_serve(cfg: RunConfig, args) -> None:
    import uvicorn

    from .api import create_app
    if args.policies and not Path(args.policies).is_dir():
        raise ValidationError(f"policy directory not found: {args.policies}")
    uvicorn.run(create_app(args.policies), host=args.host, port=args.port, log_level="warning")


# argument parsing -------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="YAML file with run settings; flags override it")
    p.add_argument("--fleet", help="fleet CSV (default: sample one from --n/--seed)")
    p.add_argument("--prices", help="price CSV with 24 rows (default: synthetic)")
    p.add_argument("--history", help="signal history CSV used for scenarios and mileage forecasts")
    p.add_argument("--n", type=int, help="fleet size when sampling")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--no-v2g", dest="v2g", action="store_const", const=False, help="disable discharging")
    p.add_argument("--bin-width", type=float, help="scenario bin width on [-1, 1]")
    p.add_argument("--node-limit", type=int, help="branch-and-bound node budget per bid")
    p.add_argument("--gap-tol", type=float, help="branch-and-bound absolute gap")
    p.add_argument("--time-limit", type=float, help="seconds per bid solve")
    p.add_argument("--c-dp", type=float, help="re-dispatch cost coefficient ($/kWh)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="evflex", description="EV aggregator bidding and regulation dispatch")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a fleet CSV")
    _common(p)
    p.add_argument("-o", "--output", default="fleet.csv")
    p.add_argument("--inputs", help="also write synthetic prices, trace and history into this directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("bid", help="solve the bid for one hour")
    _common(p)
    p.add_argument("--hour", type=int, help="hour index (0 = noon)")
    p.add_argument("-o", "--output", default="bid.csv")
    p.set_defaults(func=cmd_bid)

    p = sub.add_parser("regions", help="critical regions for one bid hour")
    _common(p)
    p.add_argument("--bid", help="bid report CSV")
    p.add_argument("--hour", type=int)
    p.add_argument("-o", "--output", default="policy.csv")
    p.set_defaults(func=cmd_regions)

    p = sub.add_parser("dispatch", help="answer one signal from a policy file")
    p.add_argument("--config")
    p.add_argument("--policy", help="policy CSV")
    p.add_argument("--signal", type=float, help="regulation signal in [-1, 1]")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_dispatch)

    p = sub.add_parser("simulate", help="run a full day")
    _common(p)
    p.add_argument("--trace", help="signal trace CSV to replay (default: synthetic)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--dispatch-mode", choices=["lookup", "direct"])
    p.add_argument("--start-hour", type=int)
    p.add_argument("--no-compare", dest="compare", action="store_const", const=False,
                   help="skip the baseline dispatch comparison")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="summarise a finished run")
    p.add_argument("run_dir")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_report, config=None)

    p = sub.add_parser("serve", help="start the HTTP dispatch service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--policies", help="directory of hour_XX.csv policy files to preload")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_serve, config=None)
    return ap


_INVALID = (ValidationError, ConfigError, FeasibilityError, PriceFileError, bidding.BidCompileError,
            FileNotFoundError, KeyError, ValueError)
_SOLVER = (bidding.BidInfeasibleError, dispatch.DispatchInfeasible, dispatch.RelaxationError, SolverError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(getattr(args, "config", None), vars(args))
        args.func(cfg, args)
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID if isinstance(exc.cause, _INVALID) and not isinstance(exc.cause, _SOLVER) else EXIT_SOLVER
    except _SOLVER as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except _INVALID as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

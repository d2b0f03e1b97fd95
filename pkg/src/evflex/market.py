"""Market price data, regulation credit and hourly cash-flow settlement."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .fleet import DT, T

PRICE_COLUMNS = ["hour", "c_e", "c_cap", "c_per", "c_fee", "c_dp"]
FLOW_COLUMNS = ["energy_cost", "regulation_credit", "flex_payment", "charging_income", "redispatch_cost"]


class PriceFileError(ValueError):
    pass


@dataclass
class MarketPrices:
    c_e: np.ndarray
    c_cap: np.ndarray
    c_per: np.ndarray
    c_fee: np.ndarray
    c_dp: np.ndarray

    def __post_init__(self):
        arrs = [np.asarray(getattr(self, k), dtype=float).reshape(-1) for k in PRICE_COLUMNS[1:]]
        n = max(a.size for a in arrs)
        arrs = [np.full(n, a[0]) if a.size == 1 else a for a in arrs]
        if len({a.size for a in arrs}) != 1:
            raise ValueError("price series must share one length")
        for name, a in zip(PRICE_COLUMNS[1:], arrs):
            if np.any(a < 0):
                raise ValueError(f"{name} has negative entries")
            setattr(self, name, a)

    @property
    def hours(self) -> int:
        return self.c_e.size

    def window(self, start: int, stop: int) -> "MarketPrices":
        return MarketPrices(*(getattr(self, k)[start:stop] for k in PRICE_COLUMNS[1:]))

    def with_c_dp(self, c_dp: float) -> "MarketPrices":
        return MarketPrices(self.c_e, self.c_cap, self.c_per, self.c_fee, np.full(self.hours, float(c_dp)))


def synthetic_prices(seed: int = 0, hours: int = T, c_dp: float = 0.05) -> MarketPrices:
    """Day-shaped price series (index 0 = noon) with PJM-like magnitudes."""
    rng = np.random.default_rng(seed)
    clock = (12 + np.arange(hours)) % 24
    evening = np.exp(-0.5 * ((clock - 18.5) / 2.0) ** 2)
    night = np.exp(-0.5 * ((((clock + 12) % 24) - 15.5) / 2.5) ** 2)
    c_e = 0.028 + 0.022 * evening - 0.008 * night + 0.002 * rng.standard_normal(hours)
    c_cap = 0.025 + 0.020 * evening + 0.003 * rng.standard_normal(hours)
    c_per = 3e-4 * (1 + 0.2 * rng.standard_normal(hours))
    c_fee = np.full(hours, 0.05)
    return MarketPrices(np.maximum(c_e, 0.005), np.maximum(c_cap, 0.002), np.maximum(c_per, 1e-6),
                        c_fee, np.full(hours, c_dp))


def load_prices(path, hours: int = T) -> MarketPrices:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        missing = [c for c in PRICE_COLUMNS if c not in cols]
        if missing:
            raise PriceFileError(f"{path}: missing column(s) {missing}")
        rows = list(reader)
    if len(rows) != hours:
        raise PriceFileError(f"{path}: expected {hours} rows, found {len(rows)} "
                             f"({'short by' if len(rows) < hours else 'over by'} {abs(hours - len(rows))})")
    data = {c: np.empty(hours) for c in PRICE_COLUMNS[1:]}
    for i, row in enumerate(rows, start=2):
        for c in PRICE_COLUMNS:
            try:
                v = float(row[c])
            except (TypeError, ValueError):
                raise PriceFileError(f"{path}: row {i}, column {c}: not a number ({row[c]!r})")
            if v < 0:
                raise PriceFileError(f"{path}: row {i}, column {c}: negative value {v}")
            if c == "hour":
                if int(v) != i - 2:
                    raise PriceFileError(f"{path}: row {i}, column hour: expected {i - 2}")
            else:
                data[c][i - 2] = v
    return MarketPrices(**data)


def write_prices(prices: MarketPrices, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PRICE_COLUMNS)
        for h in range(prices.hours):
            w.writerow([h] + [repr(float(getattr(prices, c)[h])) for c in PRICE_COLUMNS[1:]])


def regulation_credit(R, c_cap, c_per, m):
    if np.any(np.asarray(R) < 0) or np.any(np.asarray(m) < 0):
        raise ValueError("capacity and mileage must be nonnegative")
    return (c_cap + c_per * m) * R


@dataclass
class CashFlow:
    rows: list = field(default_factory=list)  # one dict per hour

    def add(self, row: dict) -> None:
        self.rows.append(row)

    def totals(self) -> dict:
        return {k: float(sum(r[k] for r in self.rows)) for k in FLOW_COLUMNS + ["net_cost"]}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["hour"] + FLOW_COLUMNS + ["net_cost"])
            for r in self.rows:
                w.writerow([r["hour"]] + [repr(float(r[k])) for k in FLOW_COLUMNS + ["net_cost"]])
            tot = self.totals()
            w.writerow(["total"] + [repr(tot[k]) for k in FLOW_COLUMNS + ["net_cost"]])


def settle_hour(hour, commit, signals, alloc, prices: MarketPrices, s_prev: float = 0.0, dt: float = DT) -> dict:
    """One hour's cash flows.

    ``commit`` is an ``HourCommitment`` (P_e, R, per-EV p0/lam/k/xi/eta_d);
    ``alloc`` maps pc, pd, dup, ddn to (D, N) arrays of sub-hourly set-points.
    """
    from .scenarios import mileage

    m = mileage(signals, s_prev) if len(signals) else 0.0
    pd, du, dd = (np.asarray(alloc[k], dtype=float) for k in ("pd", "dup", "ddn"))
    if pd.size:
        realized = (pd.mean(axis=0) / commit.eta_d + du.mean(axis=0) + dd.mean(axis=0)) * dt
        net_dep = (du.mean(axis=0) - dd.mean(axis=0)) * dt
    else:
        realized = np.zeros(len(commit.lam))
        net_dep = np.zeros(len(commit.lam))
    promised = commit.k * commit.lam + commit.xi
    flex_pay = float(np.sum(commit.lam * np.minimum(realized, promised)))
    row = {
        "hour": hour,
        "energy_cost": float(prices.c_e[hour] * commit.P_e * dt),
        "regulation_credit": float(regulation_credit(commit.R, prices.c_cap[hour], prices.c_per[hour], m)),
        "flex_payment": flex_pay,
        "charging_income": float(prices.c_fee[hour] * np.sum(commit.p0) * dt),
        "redispatch_cost": float(prices.c_dp[hour] * np.sum(net_dep)),
        "mileage": m,
    }
    row["net_cost"] = (row["energy_cost"] - row["regulation_credit"] + row["flex_payment"]
                       - row["charging_income"] + row["redispatch_cost"])
    return row

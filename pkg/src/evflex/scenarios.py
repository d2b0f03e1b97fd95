"""Regulation-signal traces, scenario binning and mileage statistics."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

DT_SUB = 2.0
SIGNALS_PER_HOUR = int(3600 / DT_SUB)


@dataclass
class SignalTrace:
    samples: np.ndarray
    dt_sub: float = DT_SUB

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float).reshape(-1)
        if self.samples.size and (self.samples.min() < -1 - 1e-12 or self.samples.max() > 1 + 1e-12):
            raise ValueError("signal samples must lie in [-1, 1]")
        self.samples = np.clip(self.samples, -1.0, 1.0)

    @property
    def per_hour(self) -> int:
        return int(round(3600 / self.dt_sub))

    @property
    def hours(self) -> int:
        return self.samples.size // self.per_hour

    def hour(self, h: int) -> np.ndarray:
        d = self.per_hour
        return self.samples[h * d:(h + 1) * d]


@dataclass(frozen=True)
class Scenario:
    value: float
    probability: float
    is_extreme: bool = False


@dataclass
class ScenarioSet:
    scenarios: list
    bin_width: float = 0.1

    @property
    def typical(self) -> list:
        return [s for s in self.scenarios if not s.is_extreme]

    @property
    def extremes(self) -> list:
        return [s for s in self.scenarios if s.is_extreme]

    def typical_values(self) -> np.ndarray:
        return np.array([s.value for s in self.typical])

    def typical_probs(self) -> np.ndarray:
        return np.array([s.probability for s in self.typical])

    def extreme_values(self) -> np.ndarray:
        return np.array([s.value for s in self.extremes])

    def sample(self, rng, n) -> np.ndarray:
        return rng.choice(self.typical_values(), size=n, p=self.typical_probs())


def bin_index(values, bin_width=0.1):
    nbins = int(round(2.0 / bin_width))
    idx = np.floor((np.asarray(values) + 1.0) / bin_width + 1e-9).astype(int)
    return np.clip(idx, 0, nbins - 1), nbins


def bin_signals(trace, bin_width: float = 0.1) -> ScenarioSet:
    """Typical bins over [-1, 1] (last bin closed) represented by their midpoints,
    plus the two extreme points with their own empirical frequencies."""
    s = trace.samples if isinstance(trace, SignalTrace) else np.asarray(trace, dtype=float)
    if s.size == 0:
        raise ValueError("cannot bin an empty trace")
    idx, nbins = bin_index(s, bin_width)
    counts = np.bincount(idx, minlength=nbins)
    probs = counts / s.size
    probs = probs / probs.sum()
    mids = -1.0 + bin_width * (np.arange(nbins) + 0.5)
    scen = [Scenario(float(np.round(m, 12)), float(p)) for m, p in zip(mids, probs) if p > 0]
    scen.append(Scenario(-1.0, float(np.mean(s <= -1.0)), True))
    scen.append(Scenario(1.0, float(np.mean(s >= 1.0)), True))
    return ScenarioSet(scen, bin_width)


def mileage(samples, s_prev: float = 0.0) -> float:
    s = np.asarray(samples, dtype=float)
    if s.size == 0:
        return 0.0
    return float(abs(s[0] - s_prev) + np.abs(np.diff(s)).sum())


def hourly_mileage(trace: SignalTrace, s_prev: float = 0.0) -> np.ndarray:
    out = []
    for h in range(trace.hours):
        seg = trace.hour(h)
        out.append(mileage(seg, s_prev))
        s_prev = seg[-1]
    return np.array(out)


def forecast_mileage(history) -> np.ndarray:
    """Per-hour-of-day mean of past mileages; rows are days, columns hours."""
    h = np.asarray(history, dtype=float)
    if h.size == 0:
        raise ValueError("mileage history is empty")
    if h.ndim == 1:
        return np.array(h.mean())
    return h.mean(axis=0)


def synthetic_regd_trace(hours: int = 24, seed: int = 0, rho: float = 0.98,
                         p_low: float = 0.041, p_high: float = 0.069,
                         dt_sub: float = DT_SUB) -> SignalTrace:
    """Clipped Gaussian AR(1) whose stationary clip masses at -1 and +1 equal
    ``p_low`` and ``p_high``."""
    zl, zh = norm.ppf(p_low), norm.ppf(1 - p_high)
    sigma = 2.0 / (zh - zl)
    mu = -1.0 - zl * sigma
    n = int(round(hours * 3600 / dt_sub))
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(n) * sigma * np.sqrt(1 - rho ** 2)
    x = np.empty(n)
    prev = mu + sigma * rng.standard_normal()
    for i in range(n):
        prev = mu + rho * (prev - mu) + eps[i]
        x[i] = prev
    return SignalTrace(np.clip(x, -1.0, 1.0), dt_sub)


def write_trace_csv(trace: SignalTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp_s", "signal"])
        for i, v in enumerate(trace.samples):
            w.writerow([repr(float(i * trace.dt_sub)), repr(float(v))])


def read_trace_csv(path) -> SignalTrace:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] == 0:
        raise ValueError(f"{path}: empty signal file")
    ts = data[:, 0]
    dt = float(ts[1] - ts[0]) if ts.size > 1 else DT_SUB
    if ts.size > 1 and np.abs(np.diff(ts) - dt).max() > 1e-6:
        raise ValueError(f"{path}: timestamps are not at a fixed cadence")
    return SignalTrace(data[:, 1], dt)


def write_scenarios_csv(ss: ScenarioSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "probability", "is_extreme"])
        for s in ss.scenarios:
            w.writerow([repr(s.value), repr(s.probability), int(s.is_extreme)])


def read_scenarios_csv(path, bin_width=0.1) -> ScenarioSet:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return ScenarioSet([Scenario(float(r["value"]), float(r["probability"]), bool(int(r["is_extreme"])))
                        for r in rows], bin_width)

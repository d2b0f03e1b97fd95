"""EV session profiles, Monte Carlo fleet sampling, and power/energy envelopes.

Time grid: ``T`` one-hour slots, index 0 is 12:00 noon.  Clock arrivals in
[13, 24] map to index ``clock - 12`` and next-morning departures in [1, 12] map
to ``clock + 12``, so no session wraps.  Power envelopes have one entry per
slot; energy envelopes have ``T + 1`` entries (energy at each slot boundary).
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

T = 24
DT = 1.0
ALPHA_CLASSES = (0.2, 0.6, 1.0, 1.4)

CSV_COLUMNS = ["id", "t_arrive", "t_depart", "soc_arrive", "soc_required", "soc_min", "soc_max",
               "battery_kwh", "p_max_kw", "p_min_kw", "eta_c", "eta_d", "alpha", "xi"]


class ConfigError(ValueError):
    pass


class FeasibilityError(ValueError):
    pass


@dataclass(frozen=True)
class EvProfile:
    id: str
    t_arrive: int
    t_depart: int
    soc_arrive: float
    soc_required: float
    soc_min: float = 0.2
    soc_max: float = 0.9
    battery_kwh: float = 50.0
    p_max: float = 10.0
    p_min: float = -10.0
    eta_c: float = 0.9
    eta_d: float = 0.93
    alpha: float = 1.0
    xi: float = 0.0

    def __post_init__(self):
        if not (0 <= self.t_arrive <= self.t_depart):
            raise ValueError(f"EV {self.id}: need 0 <= t_arrive <= t_depart")
        if not (self.soc_min <= self.soc_arrive <= self.soc_max):
            raise ValueError(f"EV {self.id}: soc_arrive outside [soc_min, soc_max]")
        if not (self.soc_min <= self.soc_required <= self.soc_max):
            raise ValueError(f"EV {self.id}: soc_required outside [soc_min, soc_max]")
        if not (self.p_min <= 0 < self.p_max):
            raise ValueError(f"EV {self.id}: need p_min <= 0 < p_max")
        if not (0 < self.eta_c <= 1 and 0 < self.eta_d <= 1):
            raise ValueError(f"EV {self.id}: efficiencies must lie in (0, 1]")
        if self.alpha < 0 or self.xi < 0:
            raise ValueError(f"EV {self.id}: alpha and xi must be nonnegative")

    @property
    def e_arrive(self) -> float:
        return self.battery_kwh * self.soc_arrive

    @property
    def e_required(self) -> float:
        return self.battery_kwh * self.soc_required

    @property
    def sojourn(self) -> int:
        return self.t_depart - self.t_arrive

    def present(self, t: int) -> bool:
        return self.t_arrive <= t < self.t_depart


def check_feasible(ev: EvProfile, dt: float = DT) -> bool:
    """Whether max-rate charging over the whole stay reaches the required energy."""
    return ev.e_arrive + ev.eta_c * ev.p_max * ev.sojourn * dt >= ev.e_required - 1e-12


def power_envelope(ev: EvProfile, horizon: int = T):
    t = np.arange(horizon)
    on = (t >= ev.t_arrive) & (t < ev.t_depart)
    return np.where(on, ev.p_min, 0.0), np.where(on, ev.p_max, 0.0)


def energy_envelope(ev: EvProfile, horizon: int = T, dt: float = DT):
    """Energy bounds at slot boundaries 0..horizon."""
    if not check_feasible(ev, dt):
        raise FeasibilityError(f"EV {ev.id}: required energy unreachable within its stay")
    t = np.arange(horizon + 1, dtype=float)
    ea, ed = ev.e_arrive, ev.e_required
    emin, emax = ev.battery_kwh * ev.soc_min, ev.battery_kwh * ev.soc_max
    rate = ev.eta_c * ev.p_max * dt
    tc = np.clip(t, ev.t_arrive, ev.t_depart)
    e_hi = np.minimum(ea + rate * (tc - ev.t_arrive), emax)
    e_lo = np.maximum.reduce([np.full_like(t, ea), ed - rate * (ev.t_depart - tc), np.full_like(t, emin)])
    before = t <= ev.t_arrive
    e_hi[before] = ea
    e_lo[before] = ea
    # tiny float slack from the feasibility boundary
    e_lo = np.minimum(e_lo, e_hi)
    return e_lo, e_hi


@dataclass
class Dist:
    kind: str = "uniform"  # uniform | truncnorm
    mu: float = 0.0
    sigma: float = 0.0
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.lo > self.hi:
            raise ConfigError(f"distribution min {self.lo} exceeds max {self.hi}")
        if self.kind not in ("uniform", "truncnorm"):
            raise ConfigError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "truncnorm" and (self.lo == self.hi or self.sigma <= 0):
            raise ConfigError("truncated normal needs positive width and sigma")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(self.lo, self.hi, n)
        out = np.empty(0)
        while out.size < n:
            draw = rng.normal(self.mu, self.sigma, max(2 * (n - out.size), 16))
            out = np.concatenate([out, draw[(draw >= self.lo) & (draw <= self.hi)]])
        return out[:n]


def _table_defaults():
    return {
        "arrival": Dist("truncnorm", 18, 1, 13, 24),
        "departure": Dist("truncnorm", 8, 2, 1, 12),
        "soc_arrive": Dist("uniform", 0.30, 0, 0.20, 0.40),
        "soc_required": Dist("uniform", 0.80, 0, 0.70, 0.90),
        "p_max": Dist("uniform", 10, 0, 8, 12),
    }


@dataclass
class FleetConfig:
    n: int = 100
    seed: int = 0
    dists: dict = field(default_factory=_table_defaults)
    battery_kwh: float = 50.0
    soc_min: float = 0.2
    soc_max: float = 0.9
    eta_c: float = 0.9
    eta_d: float = 0.93
    v2g: bool = True
    alphas: tuple = ALPHA_CLASSES
    xi: float = 0.0

    def __post_init__(self):
        if self.n < 0:
            raise ConfigError("fleet size must be >= 0")
        d = _table_defaults()
        for k, v in (self.dists or {}).items():
            d[k] = v if isinstance(v, Dist) else Dist(**v)
        self.dists = d


def sample_fleet(config: FleetConfig) -> list[EvProfile]:
    """Draw ``config.n`` sessions; alpha classes are assigned cyclically."""
    rng = np.random.default_rng(config.seed)
    n = config.n
    if n == 0:
        return []
    d = config.dists
    arr = np.rint(d["arrival"].sample(rng, n)).astype(int) - 12
    dep = np.rint(d["departure"].sample(rng, n)).astype(int) + 12
    soc_a = d["soc_arrive"].sample(rng, n)
    soc_r = d["soc_required"].sample(rng, n)
    pmax = d["p_max"].sample(rng, n)
    fleet = []
    for i in range(n):
        sojourn = dep[i] - arr[i]
        reach = (config.battery_kwh * soc_a[i] + config.eta_c * pmax[i] * sojourn * DT) / config.battery_kwh
        req = min(soc_r[i], config.soc_max)
        if req > reach:
            log.info("EV %d: soc_required %.4f clipped to reachable %.4f", i, req, reach)
            req = reach
        req = max(req, config.soc_min)
        fleet.append(EvProfile(
            id=f"ev{i:03d}", t_arrive=int(arr[i]), t_depart=int(dep[i]),
            soc_arrive=float(soc_a[i]), soc_required=float(req),
            soc_min=config.soc_min, soc_max=config.soc_max, battery_kwh=config.battery_kwh,
            p_max=float(pmax[i]), p_min=-float(pmax[i]) if config.v2g else 0.0,
            eta_c=config.eta_c, eta_d=config.eta_d,
            alpha=float(config.alphas[i % len(config.alphas)]), xi=config.xi))
    return fleet


def write_fleet_csv(fleet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for ev in fleet:
            w.writerow([ev.id, ev.t_arrive, ev.t_depart, repr(ev.soc_arrive), repr(ev.soc_required),
                        repr(ev.soc_min), repr(ev.soc_max), repr(ev.battery_kwh), repr(ev.p_max),
                        repr(ev.p_min), repr(ev.eta_c), repr(ev.eta_d), repr(ev.alpha), repr(ev.xi)])


def read_fleet_csv(path) -> list[EvProfile]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ConfigError(f"fleet file missing columns: {sorted(missing)}")
        for row in reader:
            out.append(EvProfile(
                id=row["id"], t_arrive=int(row["t_arrive"]), t_depart=int(row["t_depart"]),
                soc_arrive=float(row["soc_arrive"]), soc_required=float(row["soc_required"]),
                soc_min=float(row["soc_min"]), soc_max=float(row["soc_max"]),
                battery_kwh=float(row["battery_kwh"]), p_max=float(row["p_max_kw"]),
                p_min=float(row["p_min_kw"]), eta_c=float(row["eta_c"]), eta_d=float(row["eta_d"]),
                alpha=float(row["alpha"]), xi=float(row["xi"])))
    return out

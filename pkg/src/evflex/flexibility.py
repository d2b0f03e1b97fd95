"""Per-EV flexibility quantities and affine price-to-quantity supply curves."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fleet import DT, EvProfile, energy_envelope, power_envelope


@dataclass(frozen=True)
class SupplyCurve:
    k: float
    xi: float = 0.0

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("supply curve slope must be nonnegative")


@dataclass(frozen=True)
class FlexRecord:
    discharge_power: float
    delta_up: float
    delta_dn: float
    flex: float
    price: float


def flexibility_contribution(p_d, dup, ddn, eta_d, dt=DT):
    """Discharge throughput plus both reserve ranges, in kWh."""
    if np.any(np.asarray(p_d) < 0) or np.any(np.asarray(dup) < 0) or np.any(np.asarray(ddn) < 0):
        raise ValueError("flexibility inputs must be nonnegative")
    return (np.asarray(p_d) / eta_d + dup + ddn) * dt


def max_flexibility(ev: EvProfile, dt: float = DT) -> float:
    return (-ev.p_min / ev.eta_d + ev.p_max - ev.p_min) * dt


def build_supply_curve(ev: EvProfile, c_fee: float, dt: float = DT) -> SupplyCurve:
    if c_fee <= 0:
        raise ValueError("charging fee must be positive")
    return SupplyCurve(ev.alpha * max_flexibility(ev, dt) / c_fee, ev.xi)


def flex_at_price(curve: SupplyCurve, lam):
    if np.any(np.asarray(lam) < 0):
        raise ValueError("flexibility price must be nonnegative")
    return curve.k * np.asarray(lam) + curve.xi


def propagate_energy(e_start, powers, eta_c, eta_d, dt=DT):
    """Energy path for a net power sequence; each hour is all-charge or all-discharge."""
    p = np.asarray(powers, dtype=float)
    step = np.where(p >= 0, eta_c * p, p / eta_d) * dt
    return e_start + np.concatenate([[0.0], np.cumsum(step)])


def reserve_range_feasible(ev: EvProfile, p0, dup, ddn, *, start: int = 0, e_start=None,
                           dt: float = DT, tol: float = 1e-9) -> bool:
    """Power limits on both reserve directions and energy limits along the two
    boundary trajectories p0 - dup and p0 + ddn, from hour ``start`` onward."""
    p0, dup, ddn = (np.asarray(a, dtype=float) for a in (p0, dup, ddn))
    h = p0.size
    horizon = start + h
    p_lo, p_hi = power_envelope(ev, max(horizon, ev.t_depart))
    e_lo, e_hi = energy_envelope(ev, max(horizon, ev.t_depart), dt)
    p_lo, p_hi = p_lo[start:horizon], p_hi[start:horizon]
    e_lo, e_hi = e_lo[start:horizon + 1], e_hi[start:horizon + 1]
    if np.any(p0 < p_lo - tol) or np.any(p0 > p_hi + tol):
        return False
    if np.any(dup < -tol) or np.any(ddn < -tol):
        return False
    if np.any(dup > p0 - p_lo + tol) or np.any(ddn > p_hi - p0 + tol):
        return False
    e0 = e_lo[0] if e_start is None else e_start
    for path in (p0 - dup, p0 + ddn):
        e = propagate_energy(e0, path, ev.eta_c, ev.eta_d, dt)
        if np.any(e < e_lo - tol) or np.any(e > e_hi + tol):
            return False
    return True

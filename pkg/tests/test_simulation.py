import numpy as np
import pytest

from evflex.fleet import FleetConfig, sample_fleet
from evflex.market import synthetic_prices
from evflex.scenarios import SignalTrace, bin_signals, synthetic_regd_trace
from evflex.simulation import SimOptions, simulate_day


@pytest.fixture(scope="module")
def day():
    fleet = sample_fleet(FleetConfig(n=3, seed=5))
    prices = synthetic_prices(5)
    trace = synthetic_regd_trace(24, seed=6)
    scen = bin_signals(synthetic_regd_trace(48, seed=7), 0.2)
    return fleet, prices, trace, scen


def _run(day, **kw):
    fleet, prices, trace, scen = day
    opts = SimOptions(node_limit=4, **kw)
    return simulate_day(fleet, prices, trace, scen, np.full(24, 300.0), opts)


@pytest.fixture(scope="module")
def lookup_run(day):
    return _run(day)


def test_small_day_meets_departures_and_balance(lookup_run):
    assert lookup_run.departure_ok
    assert lookup_run.max_balance_error <= 1e-8
    assert len(lookup_run.cash.rows) == 24
    assert lookup_run.latencies.size > 0


def test_direct_mode_matches_lookup(day, lookup_run):
    direct = _run(day, dispatch_mode="direct")
    for a, b in zip(lookup_run.cash.rows, direct.cash.rows):
        for k in ("energy_cost", "regulation_credit", "flex_payment", "charging_income", "redispatch_cost"):
            assert a[k] == pytest.approx(b[k], abs=1e-6), (a["hour"], k)


def test_zero_signal_day_follows_plan(day):
    fleet, prices, _, scen = day
    zero = SignalTrace(np.zeros(24 * 1800))
    res = simulate_day(fleet, prices, zero, scen, np.full(24, 300.0), SimOptions(node_limit=4))
    assert res.departure_ok
    tot = res.cash.totals()
    assert tot["redispatch_cost"] == pytest.approx(0.0, abs=1e-9)
    # with no deployment each hour's delivered power is the committed baseline
    for c in res.commits:
        on = c.present
        if on.any():
            assert res.power[c.hour, on] == pytest.approx(c.p0[on], abs=1e-6)


def test_rejects_short_trace(day):
    fleet, prices, _, scen = day
    with pytest.raises(ValueError):
        simulate_day(fleet, prices, SignalTrace(np.zeros(1800)), scen)

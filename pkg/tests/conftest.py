import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("evflex", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("evflex")

from evflex.bidding import EvaState, compile_bidding  # noqa: E402
from evflex.dispatch import DispatchProblem  # noqa: E402
from evflex.fleet import EvProfile  # noqa: E402
from evflex.market import MarketPrices  # noqa: E402
from evflex.scenarios import Scenario, ScenarioSet  # noqa: E402


def small_scenarios():
    """Three typical signals and the two extremes."""
    return ScenarioSet([Scenario(-0.4, 0.3), Scenario(0.0, 0.4), Scenario(0.5, 0.3),
                        Scenario(-1.0, 0.04, True), Scenario(1.0, 0.07, True)], 0.1)


def small_prices(hours=3, **over):
    base = dict(c_e=[0.03, 0.05, 0.02, 0.04][:hours], c_cap=[0.04, 0.06, 0.03, 0.05][:hours],
                c_per=[3e-4] * hours, c_fee=[0.05] * hours, c_dp=[0.05] * hours)
    base.update(over)
    return MarketPrices(**base)


def two_ev_fleet():
    # one discharge-capable EV leaving after two hours, one charge-only EV
    return [EvProfile("a", 0, 2, 0.4, 0.5, alpha=1.4, p_max=6, p_min=-6, battery_kwh=20),
            EvProfile("b", 0, 3, 0.3, 0.6, alpha=1.0, p_max=7, p_min=0.0, battery_kwh=30)]


def two_ev_bidding(**price_over):
    fleet = two_ev_fleet()
    prices = small_prices(3, **price_over)
    prob = compile_bidding(fleet, prices, small_scenarios(), EvaState.initial(fleet),
                           mileage_forecast=np.full(3, 300.0))
    return fleet, prices, prob


def random_dispatch_problem(rng, n, lam_hi=0.05, c_dp=0.05):
    """Dispatch instance feasible for every signal in [-1, 1] by construction."""
    pmax = rng.uniform(3, 12, n)
    v2g = rng.random(n) < 0.7
    p_lo = np.where(v2g, -pmax, 0.0)
    p_hi = pmax
    p0 = rng.uniform(p_lo, p_hi)
    dup = rng.uniform(0, 1, n) * (p0 - p_lo)
    ddn = rng.uniform(0, 1, n) * (p_hi - p0)
    R = float(min(dup.sum(), ddn.sum()) * rng.uniform(0, 1))
    return DispatchProblem(P_hat=float(p0.sum()), R_hat=R, p0=p0, p_lo=p_lo, p_hi=p_hi, dup=dup, ddn=ddn,
                           lam=np.round(rng.uniform(0, lam_hi, n), 6), c_dp=np.full(n, c_dp),
                           eta_d=np.full(n, 0.93), ids=[f"e{i}" for i in range(n)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, echoed at the end of the run
ACCEPTANCE = []


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

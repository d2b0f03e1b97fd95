import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evflex.bidding import HourCommitment
from evflex.market import (PRICE_COLUMNS, CashFlow, MarketPrices, PriceFileError, load_prices, regulation_credit,
                           settle_hour, synthetic_prices, write_prices)


def _write(path, rows):
    path.write_text(",".join(PRICE_COLUMNS) + "\n" + "\n".join(",".join(map(str, r)) for r in rows) + "\n")


def _rows(n=24):
    return [[h, 0.03, 0.04, 3e-4, 0.05, 0.05] for h in range(n)]


def test_load_prices_ok(tmp_path):
    _write(tmp_path / "p.csv", _rows())
    p = load_prices(tmp_path / "p.csv")
    assert p.hours == 24 and np.all(p.c_cap == 0.04)


def test_load_prices_errors(tmp_path):
    _write(tmp_path / "short.csv", _rows(23))
    with pytest.raises(PriceFileError, match="short by 1"):
        load_prices(tmp_path / "short.csv")
    bad = _rows()
    bad[5][2] = -0.01
    _write(tmp_path / "neg.csv", bad)
    with pytest.raises(PriceFileError, match="row 7, column c_cap"):
        load_prices(tmp_path / "neg.csv")
    (tmp_path / "col.csv").write_text("hour,c_e\n0,1\n")
    with pytest.raises(PriceFileError, match="missing"):
        load_prices(tmp_path / "col.csv")


def test_price_round_trip(tmp_path):
    p = synthetic_prices(3)
    write_prices(p, tmp_path / "p.csv")
    q = load_prices(tmp_path / "p.csv")
    for c in PRICE_COLUMNS[1:]:
        assert np.array_equal(getattr(p, c), getattr(q, c))


def test_regulation_credit_examples():
    assert regulation_credit(0.0, 5, 0.5, 10) == 0
    assert regulation_credit(2.0, 5, 0.5, 10) == pytest.approx(20.0)
    assert regulation_credit(2.0, 5, 0.5, 0) == pytest.approx(10.0)
    with pytest.raises(ValueError):
        regulation_credit(-1.0, 5, 0.5, 0)


def one_ev_commit(R=5.0, lam=0.02, k=100.0):
    a = lambda v: np.array([v], dtype=float)  # noqa: E731
    return HourCommitment(0, 6.0, R, ["a"], a(6.0), a(5.0), a(5.0), a(lam), a(k), a(0.0), a(k * lam),
                          a(0.93), a(0.9), a(-10.0), a(10.0), np.array([True]), a(0.0))


def _alloc(signals, R=5.0):
    s = np.asarray(signals, dtype=float)[:, None]
    return {"pc": 6.0 - R * s, "pd": np.zeros_like(s), "dup": R * np.maximum(s, 0), "ddn": R * np.maximum(-s, 0)}


PRICES = MarketPrices([0.03], [0.04], [3e-4], [0.05], [0.05])


def test_settle_hand_worksheet():
    sig = [0.2, -0.4, 1.0, 0.0]
    row = settle_hour(0, one_ev_commit(), sig, _alloc(sig), PRICES)
    # mileage 0.2 + 0.6 + 1.4 + 1.0; mean up 1.5 kW, mean down 0.5 kW
    assert row["mileage"] == pytest.approx(3.2)
    assert row["energy_cost"] == pytest.approx(0.18)
    assert row["regulation_credit"] == pytest.approx((0.04 + 3e-4 * 3.2) * 5)
    assert row["flex_payment"] == pytest.approx(0.02 * 2.0)
    assert row["charging_income"] == pytest.approx(0.3)
    assert row["redispatch_cost"] == pytest.approx(0.05 * 1.0)
    assert row["net_cost"] == pytest.approx(0.18 - 0.2048 + 0.04 - 0.3 + 0.05)


def test_settle_zero_trace_no_capacity():
    c = one_ev_commit(R=0.0)
    sig = [0.0] * 10
    row = settle_hour(0, c, sig, _alloc(sig, 0.0), PRICES)
    assert row["regulation_credit"] == 0 and row["flex_payment"] == 0 and row["redispatch_cost"] == 0
    assert row["energy_cost"] > 0 and row["charging_income"] > 0


def test_flex_payment_capped_by_supply_curve():
    sig = [1.0] * 4
    c = one_ev_commit(k=10.0)  # promises 0.2 kWh, delivers 5
    row = settle_hour(0, c, sig, _alloc(sig), PRICES)
    assert row["flex_payment"] <= 0.02 * (10.0 * 0.02) + 1e-9


@given(st.sampled_from(["c_e", "c_cap", "c_per", "c_fee", "c_dp"]), st.floats(0.0, 5.0))
def test_settlement_linear_in_each_price(name, f):
    sig = [0.3, -0.7, 0.9, -0.1]
    comp = {"c_e": "energy_cost", "c_fee": "charging_income", "c_dp": "redispatch_cost"}
    base = settle_hour(0, one_ev_commit(), sig, _alloc(sig), PRICES)
    kw = {c: getattr(PRICES, c).copy() for c in PRICE_COLUMNS[1:]}
    kw[name] = kw[name] * f
    row = settle_hour(0, one_ev_commit(), sig, _alloc(sig), MarketPrices(**kw))
    if name in comp:
        assert row[comp[name]] == pytest.approx(f * base[comp[name]], rel=1e-12, abs=1e-15)
    else:
        # credit is affine in each of its two prices with the other held fixed
        other = base["regulation_credit"] - 5.0 * (PRICES.c_cap[0] if name == "c_cap" else 3e-4 * base["mileage"])
        assert row["regulation_credit"] == pytest.approx(other + f * (base["regulation_credit"] - other),
                                                         rel=1e-12)
    for k in ("energy_cost", "flex_payment", "charging_income", "redispatch_cost"):
        if comp.get(name) != k:
            assert row[k] == base[k]


def test_doubling_fee_doubles_income():
    sig = [0.5, 0.5]
    a = settle_hour(0, one_ev_commit(), sig, _alloc(sig), PRICES)
    b = settle_hour(0, one_ev_commit(), sig, _alloc(sig), MarketPrices([0.03], [0.04], [3e-4], [0.1], [0.05]))
    assert b["charging_income"] == pytest.approx(2 * a["charging_income"])
    assert all(a[k] == b[k] for k in ("energy_cost", "regulation_credit", "flex_payment", "redispatch_cost"))


def test_cash_flow_totals(tmp_path):
    cf = CashFlow()
    sig = [0.1, 0.2]
    for h in range(3):
        cf.add(dict(settle_hour(0, one_ev_commit(), sig, _alloc(sig), PRICES), hour=h))
    tot = cf.totals()
    assert tot["energy_cost"] == pytest.approx(3 * 0.18, abs=1e-9)
    cf.write_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert len(lines) == 5 and lines[-1].startswith("total,")

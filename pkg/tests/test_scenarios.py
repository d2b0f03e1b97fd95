import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import binomtest

from evflex.scenarios import (SignalTrace, bin_signals, forecast_mileage, hourly_mileage, mileage,
                              read_scenarios_csv, read_trace_csv, synthetic_regd_trace, write_scenarios_csv,
                              write_trace_csv)


def test_zero_trace_single_bin():
    ss = bin_signals(SignalTrace(np.zeros(1800)))
    assert len(ss.typical) == 1
    assert ss.typical[0].probability == 1.0
    assert ss.typical[0].value - 0.1 / 2 <= 0.0 <= ss.typical[0].value + 0.1 / 2
    assert [s.probability for s in ss.extremes] == [0.0, 0.0]
    assert sorted(ss.extreme_values()) == [-1.0, 1.0]


def test_bin_representative_is_bin_centre():
    ss = bin_signals(SignalTrace(np.full(10, -0.83)))
    assert ss.typical[0].value == pytest.approx(-0.85)


def test_constructed_trace_reproduces_boundary_statistics():
    # exact fractions: 4.1% at -1, 5.9% inside (-1, -0.9), 6.9% at +1, 2.1% inside [0.9, 1)
    n = 100000
    parts = [np.full(4100, -1.0), np.full(5900, -0.95), np.full(6900, 1.0), np.full(2100, 0.95)]
    rest = n - sum(p.size for p in parts)
    parts.append(np.linspace(-0.89, 0.89, rest))
    ss = bin_signals(SignalTrace(np.concatenate(parts)))
    ext = {s.value: s.probability for s in ss.extremes}
    assert ext[-1.0] == pytest.approx(0.041) and ext[1.0] == pytest.approx(0.069)
    typ = {round(s.value, 6): s.probability for s in ss.typical}
    assert typ[-0.95] == pytest.approx(0.1)
    assert typ[0.95] == pytest.approx(0.09)
    assert sum(typ.values()) == pytest.approx(1.0, abs=1e-12)


def test_uniform_trace_bins():
    rng = np.random.default_rng(0)
    ss = bin_signals(SignalTrace(rng.uniform(-1, 1, 10 ** 6)))
    p = ss.typical_probs()
    assert p.size == 20
    assert np.all(np.abs(p - 0.05) <= 0.002)


def test_empty_trace_rejected():
    with pytest.raises(ValueError):
        bin_signals(SignalTrace(np.zeros(0)))


def test_resampling_reproduces_probabilities():
    ss = bin_signals(synthetic_regd_trace(24, seed=4))
    draws = ss.sample(np.random.default_rng(9), 10 ** 6)
    again = bin_signals(SignalTrace(draws), ss.bin_width)
    got = {round(s.value, 9): s.probability for s in again.typical}
    for s in ss.typical:
        k = int(round(got.get(round(s.value, 9), 0.0) * 10 ** 6))
        assert binomtest(k, 10 ** 6, s.probability).pvalue > 1e-3


def test_mileage_examples():
    assert mileage([0.3] * 5, 0.3) == 0
    assert mileage([1, -1, 1, -1], 0.0) == 7
    tr = np.array([0.2, -0.4, 0.9, 0.1])
    assert mileage(0.5 * tr, 0.0) == pytest.approx(0.5 * mileage(tr, 0.0))


def test_hourly_mileage_chains_previous_hour():
    tr = SignalTrace(np.concatenate([np.full(1800, 0.5), np.full(1800, -0.5)]))
    assert list(hourly_mileage(tr)) == [0.5, 1.0]


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=50), st.floats(-1, 1))
def test_mileage_triangle_bound(samples, s_prev):
    assert mileage(samples, s_prev) >= abs(samples[-1] - s_prev) - 1e-12


def test_forecast_mileage_examples():
    assert forecast_mileage([[100.0]]) == pytest.approx([100.0])
    assert forecast_mileage([[80.0], [120.0]]) == pytest.approx([100.0])
    assert np.allclose(forecast_mileage(np.full((4, 24), 37.0)), 37.0)
    with pytest.raises(ValueError):
        forecast_mileage([])


def test_trace_and_scenario_csv_round_trip(tmp_path):
    tr = synthetic_regd_trace(1, seed=3)
    write_trace_csv(tr, tmp_path / "t.csv")
    back = read_trace_csv(tmp_path / "t.csv")
    assert back.dt_sub == 2.0 and np.array_equal(back.samples, tr.samples)
    ss = bin_signals(tr)
    write_scenarios_csv(ss, tmp_path / "s.csv")
    assert read_scenarios_csv(tmp_path / "s.csv").scenarios == ss.scenarios


def test_trace_rejects_out_of_range():
    with pytest.raises(ValueError):
        SignalTrace([0.0, 1.5])

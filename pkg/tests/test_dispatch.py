import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_dispatch_problem
from evflex.dispatch import (NV, DirectDispatcher, DispatchInfeasible, DispatchProblem, RelaxationError,
                             baseline_allocations, build_dispatch_lp, compute_regions, dispatch_direct,
                             exact_relaxation_applicable, exclusion_violation, feasibility_residual, lookup,
                             lookup_many, read_policy_csv, water_fill, write_policy_csv)
from oracles import dispatch_miqp_enumeration, dispatch_value_highs


def one_ev(R=5.0, p0=6.0, lam=0.0, c_dp=0.05, p_lo=0.0, p_hi=12.0, cap=5.0):
    return DispatchProblem(P_hat=p0, R_hat=R, p0=[p0], p_lo=[p_lo], p_hi=[p_hi], dup=[cap], ddn=[cap],
                           lam=[lam], c_dp=[c_dp], eta_d=[0.93])


def _x(r):
    x = np.empty(NV * r.pc.size)
    x[0::NV], x[1::NV], x[2::NV], x[3::NV] = r.pc, r.pd, r.dup, r.ddn
    return x


def test_relaxation_applicability():
    p = random_dispatch_problem(np.random.default_rng(0), 4, lam_hi=0.0)
    assert exact_relaxation_applicable(p) == (True, [])
    p.lam[2] = 0.1
    ok, bad = exact_relaxation_applicable(p)
    assert not ok and bad == [p.ids[2]]
    p.lam[2] = 0.05
    assert exact_relaxation_applicable(p)[0]


def test_build_lp_shape_and_rhs():
    plp = build_dispatch_lp(one_ev())
    assert plp.lp.n == 4 and plp.lp.A_eq.shape == (2, 4)
    assert plp.at(0.0).b_eq[0] == pytest.approx(6.0)
    assert plp.at(1.0).b_eq[0] == pytest.approx(1.0)
    with pytest.raises(RelaxationError):
        build_dispatch_lp(one_ev(lam=0.1))


def test_single_ev_two_regions_against_grid():
    p = one_ev()
    pol = compute_regions(build_dispatch_lp(p))
    assert len(pol.regions) == 2
    assert pol.regions[0].theta_hi == pytest.approx(0.0, abs=1e-12)
    for th in np.linspace(-1, 1, 201):
        r = lookup(pol, th)
        ref, _ = dispatch_value_highs(p, th)
        assert r.value == pytest.approx(ref, abs=1e-9)
        assert r.dup[0] == pytest.approx(max(5 * th, 0), abs=1e-9)
        assert r.ddn[0] == pytest.approx(max(-5 * th, 0), abs=1e-9)


def test_zero_capacity_single_region():
    pol = compute_regions(build_dispatch_lp(one_ev(R=0.0)))
    assert len(pol.regions) == 1
    g = pol.regions[0]
    assert (g.theta_lo, g.theta_hi) == (-1.0, 1.0)
    assert np.allclose(g.R, 0)


def test_lookup_examples(rng):
    p = random_dispatch_problem(rng, 8)
    # a discharging baseline can profit from swapping discharge for downward
    # deployment at s = 0, so the no-deployment example needs p0 >= 0
    p.p0 = np.abs(p.p0)
    p.p_lo = np.minimum(p.p_lo, 0.0)
    p.dup = np.minimum(p.dup, p.p0 - p.p_lo)
    p.ddn = np.minimum(p.ddn, p.p_hi - p.p0)
    p.P_hat = float(p.p0.sum())
    p.R_hat = float(min(p.R_hat, p.dup.sum(), p.ddn.sum()))
    pol = compute_regions(build_dispatch_lp(p))
    r0 = lookup(pol, 0.0)
    assert np.allclose(r0.dup, 0, atol=1e-10) and np.allclose(r0.ddn, 0, atol=1e-10)
    assert r0.net.sum() == pytest.approx(p.P_hat, abs=1e-9)
    assert r0.value == pytest.approx(dispatch_value_highs(p, 0.0)[0], abs=1e-9)
    assert lookup(pol, 1.0).net.sum() == pytest.approx(p.P_hat - p.R_hat, abs=1e-9)
    for a, b in zip(pol.regions, pol.regions[1:]):
        va = a.value_slope * a.theta_hi + a.value_offset
        vb = b.value_slope * b.theta_lo + b.value_offset
        assert va == pytest.approx(vb, rel=1e-7, abs=1e-9)


def test_lookup_clamps(caplog):
    pol = compute_regions(build_dispatch_lp(one_ev()))
    r = lookup(pol, 1.5)
    assert r.dup[0] == pytest.approx(5.0)
    assert "clamped" in caplog.text


def test_value_piecewise_affine_on_grid():
    # independent values on a 201-point grid lie on each region's affine piece
    p = random_dispatch_problem(np.random.default_rng(7), 6)
    pol = compute_regions(build_dispatch_lp(p))
    plp = build_dispatch_lp(p)
    for th in np.linspace(-1, 1, 201):
        ref, _ = dispatch_value_highs(p, th)
        k = int(np.searchsorted(pol.theta_lo, th, side="right")) - 1
        g = pol.regions[min(max(k, 0), len(pol.regions) - 1)]
        assert g.value_slope * th + g.value_offset == pytest.approx(ref, abs=1e-8)
        assert np.abs(lookup(pol, th).pc - g.x(th)[0::NV]).max() <= 1e-8
        assert feasibility_residual(plp, g.x(th), th) <= 1e-8


def test_parity_with_direct_solves():
    rng = np.random.default_rng(21)
    p = random_dispatch_problem(rng, 10)
    pol = compute_regions(build_dispatch_lp(p))
    disp = DirectDispatcher(p)
    for th in rng.uniform(-1, 1, 1000):
        a, b = lookup(pol, th), disp.solve(th)
        assert abs(a.value - b.value) <= 1e-6 * (1 + abs(b.value))
        assert np.abs(_x(a) - _x(b)).max() <= 1e-6


def test_zero_capacity_direct_equals_zero_signal():
    p = one_ev(R=0.0)
    a, b = dispatch_direct(p, 0.7), dispatch_direct(p, 0.0)
    assert np.array_equal(_x(a), _x(b))


@given(st.integers(0, 2 ** 31 - 1), st.floats(-1, 1))
def test_complementarity_at_dispatch_optimum(seed, th):
    p = random_dispatch_problem(np.random.default_rng(seed), 5)
    r = dispatch_direct(p, th)
    assert np.all(r.pc * r.pd <= 1e-10)
    assert np.all(r.dup * r.ddn <= 1e-10)
    assert r.net.sum() == pytest.approx(p.P_hat - th * p.R_hat, abs=1e-8)


def test_miqp_fallback_matches_enumeration():
    rng = np.random.default_rng(3)
    for _ in range(6):
        p = random_dispatch_problem(rng, 3, lam_hi=0.15)
        p.lam[0] = 0.12  # above the re-dispatch coefficient
        assert not exact_relaxation_applicable(p)[0]
        disp = DirectDispatcher(p, force_miqp=True)
        for th in (-0.8, -0.1, 0.4, 1.0):
            ref, _ = dispatch_miqp_enumeration(p, th)
            r = disp.solve(th)
            assert exclusion_violation(_x(r)) <= 1e-10
            assert r.value == pytest.approx(ref, abs=1e-7)


def test_certified_relaxation_or_error():
    # with lam > c_dp the relaxed sweep either proves exclusion or refuses
    rng = np.random.default_rng(5)
    for _ in range(8):
        p = random_dispatch_problem(rng, 3, lam_hi=0.15)
        try:
            pol = compute_regions(build_dispatch_lp(p, certify=True))
        except RelaxationError:
            continue
        for th in np.linspace(-1, 1, 21):
            ref, _ = dispatch_miqp_enumeration(p, th)
            assert lookup(pol, th).value == pytest.approx(ref, abs=1e-7)


def test_infeasible_sweep_is_hard_error():
    p = one_ev()
    p.R_hat = 8.0  # beyond the 5 kW caps
    with pytest.raises(DispatchInfeasible):
        compute_regions(build_dispatch_lp(p))


def test_baselines():
    p = DispatchProblem(P_hat=10.0, R_hat=5.0, p0=[5.0, 5.0], p_lo=[-10, -10], p_hi=[10, 10], dup=[2.0, 8.0],
                        ddn=[2.0, 8.0], lam=[0.01, 0.02], c_dp=[0.05, 0.05], eta_d=[0.93, 0.93])
    r = baseline_allocations(p, 1.0, "proportional")
    assert r.dup == pytest.approx([1.0, 4.0])
    assert baseline_allocations(p, 1.0, "round_robin").dup == pytest.approx([2.0, 3.0])
    assert baseline_allocations(p, -0.4, "proportional").ddn == pytest.approx([0.4, 1.6])
    eq = DispatchProblem(P_hat=10.0, R_hat=6.0, p0=[5.0, 5.0, 0.0], p_lo=[-10] * 3, p_hi=[10] * 3,
                         dup=[4.0] * 3, ddn=[4.0] * 3, lam=[0.01] * 3, c_dp=[0.05] * 3, eta_d=[0.93] * 3)
    for s in (-1.0, 0.3, 1.0):
        assert _x(baseline_allocations(eq, s, "proportional")) == pytest.approx(
            _x(baseline_allocations(eq, s, "round_robin")))
    mf = baseline_allocations(eq, 1.0, "max_fairness")
    assert mf.dup == pytest.approx([2.0, 2.0, 2.0])
    with pytest.raises(ValueError):
        baseline_allocations(p, 1.0, "lottery")
    p.R_hat = 20.0
    with pytest.raises(ValueError):
        baseline_allocations(p, 1.0, "proportional")


def test_water_fill():
    assert water_fill(5.0, [2.0, 8.0]) == pytest.approx([2.0, 3.0])
    assert water_fill(0.0, [1.0]) == pytest.approx([0.0])
    with pytest.raises(ValueError):
        water_fill(11.0, [2.0, 8.0])


@given(st.integers(0, 2 ** 31 - 1))
def test_policy_csv_round_trip(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    p = random_dispatch_problem(rng, int(rng.integers(1, 5)))
    pol = compute_regions(build_dispatch_lp(p))
    path = tmp_path_factory.mktemp("pol") / "p.csv"
    write_policy_csv(pol, path)
    back = read_policy_csv(path)
    assert len(back.regions) == len(pol.regions) and back.ids == pol.ids
    for a, b in zip(pol.regions, back.regions):
        assert (a.theta_lo, a.theta_hi, a.value_slope, a.value_offset) == (b.theta_lo, b.theta_hi,
                                                                           b.value_slope, b.value_offset)
        assert np.array_equal(a.R, b.R) and np.array_equal(a.r, b.r) and a.active_set == b.active_set
    s = rng.uniform(-1, 1, 16)
    assert np.array_equal(lookup_many(pol, s)[0], lookup_many(back, s)[0])

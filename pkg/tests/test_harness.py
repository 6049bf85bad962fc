import math

import numpy as np
import pytest
from conftest import collapsed_closed_form

from degflow import background as bgm
from degflow import harness as hz
from degflow.errors import HypothesisNotSatisfied, NeedSamplesError
from degflow.fields import GridSpec, ScalarField
from degflow.regularize import ApproxLadder, InitialData, single_ladder, smooth_ladder, strictify
from degflow.solvers import FlowState, FlowTrajectory, SolverConfig, flow_run, ladder_flow


def test_eta_and_uniformity():
    assert hz.eta(16, 0.01) == pytest.approx(1 / 256 + 0.01)
    assert hz.eta(16, 0.01, c1=2.0) == pytest.approx(2 * (1 / 256 + 0.01))
    ok, d = hz.uniformity([1.0, 1.5, 1.55, 1.56])
    assert ok and len(d) == 3
    ok, _ = hz.uniformity([1.0, 1.0, 1.3])
    assert not ok
    ok, _ = hz.uniformity([2.0, 1.0, 0.5], growth_only=True)
    assert ok
    ok, _ = hz.uniformity([0.0, 1e-5, 2e-5], floor=1e-3)
    assert ok


@pytest.fixture(scope="module")
def stationary():
    g = GridSpec(1, 16)
    bg = bgm.BackgroundFamily(g, 1.0, 1.0)
    lad = single_ladder(bg, InitialData(ScalarField.constant(g, 0.0)))
    lf = ladder_flow(bg, lad, 0.5, SolverConfig(K=32), sample_times=[0.1, 0.2, 0.3, 0.4])
    return bg, lad, lf


@pytest.fixture(scope="module")
def collapsed():
    g = GridSpec(1, 8)
    bg = bgm.BackgroundFamily(g, 0.0, 1.0)
    lad = smooth_ladder(bg, InitialData(ScalarField.constant(g, 0.0)), J=6)
    lf = ladder_flow(bg, lad, 0.5, SolverConfig(K=64), sample_times=[0.01, 0.1, 0.2, 0.3, 0.4])
    return bg, lad, lf


def test_stationary_constants_vanish(stationary):
    bg, _, lf = stationary
    trajs = lf.trajectories
    for rep in (hz.check_upper_u(trajs), hz.check_ut_upper(trajs), hz.check_ut_lower(trajs, 0.1, 0.5)):
        assert rep.constant == 0.0 and rep.passed
        assert len(rep.per_rung) == len(trajs)
    wt = bgm.builtin_weight(bg.grid, 1, lam=0.05)
    rep = hz.check_deg_upper(trajs, wt, A=0.5)
    assert rep.constant == pytest.approx(0.0, abs=1e-14) and rep.passed
    assert rep.masked_fraction == pytest.approx(float(wt.mask.mean()))
    rep = hz.check_lower_scenario(trajs, A=2.0, margin_c=0.5)
    assert rep.details["t_window"] == pytest.approx(math.log(1.5))
    assert rep.constant == pytest.approx(0.0, abs=1e-14) and rep.passed


def test_stationary_residuals(stationary):
    _, _, lf = stationary
    tr = lf.finest
    for which, kw in (("eq1", {}), ("eq2", {}), ("eq3", {"A": 2.0}), ("delta_comb", {"lambda1": 0.1, "delta": 0.5})):
        r = hz.residual_transformed_eqs(tr, which, **kw)
        assert r.max_sup <= 1e-8


def test_stationary_weak_gaps(stationary):
    bg, _, lf = stationary
    tests = [ScalarField.constant(bg.grid, 1.0),
             ScalarField.from_function(bg.grid, lambda x, y: 1 + 0.5 * np.cos(2 * np.pi * x) + 0 * y)]
    rep = hz.check_weak_convergence(lf.finest, tests, [1], conv_tol=1e-8)
    assert rep.constant <= 1e-8


def test_residual_needs_samples(stationary):
    _, _, lf = stationary
    with pytest.raises(NeedSamplesError):
        hz.residual_transformed_eqs(lf.finest, "eq2", window=(0.39, 0.41))


def _oracle_trajectory(times):
    g = GridSpec(1, 8)
    bg = bgm.BackgroundFamily(g, 0.0, 1.0)
    states = []
    for t in times:
        u = collapsed_closed_form(t)
        ut = math.log(-math.expm1(-t)) - u
        states.append(FlowState(t, ScalarField.constant(g, u), ScalarField.constant(g, ut), bgm.omega_t(bg, t)))
    init = FlowState(0.0, ScalarField.constant(g, 0.0), ScalarField.constant(g, -np.inf), bgm.omega_t(bg, 0.0))
    return FlowTrajectory(states=states, initial=init, bg=bg)


def test_eq2_quantity_is_affine_on_oracle():
    # dQ/dt = 1 exactly, so centred differences are exact.
    tr = _oracle_trajectory([0.3, 0.35, 0.4, 0.45, 0.5])
    assert hz.residual_transformed_eqs(tr, "eq2").max_sup <= 1e-12


@pytest.mark.parametrize("which,kw", [("eq1", {}), ("eq3", {"A": 2.0})])
def test_residual_second_order_on_oracle(which, kw):
    sups = []
    for h in (0.04, 0.02, 0.01):
        tr = _oracle_trajectory([0.5 - h, 0.5, 0.5 + h])
        sups.append(hz.residual_transformed_eqs(tr, which, **kw).max_sup)
    rates = [math.log2(a / b) for a, b in zip(sups, sups[1:])]
    assert min(rates) >= 1.9, rates


def test_collapsed_bounds(collapsed):
    _, _, lf = collapsed
    trajs = lf.trajectories
    up = hz.check_upper_u(trajs)
    assert up.passed and up.constant <= 1e-12
    ut = hz.check_ut_upper(trajs)
    assert ut.passed and ut.constant <= 1e-3
    lo = hz.check_ut_lower(trajs, 0.1, 0.4)
    assert lo.passed and np.isfinite(lo.constant)
    with pytest.raises(HypothesisNotSatisfied):
        hz.check_lower_scenario(trajs, A=2.0)


def test_collapsed_weak_gap_formula(collapsed):
    bg, _, lf = collapsed
    tr = lf.finest
    rep = hz.check_weak_convergence(tr, [ScalarField.constant(bg.grid, 1.0)], [1])
    case = rep.details["cases"][0]
    eps = tr.eps
    for t, gap in zip(case["times"], case["gaps"]):
        assert gap == pytest.approx((1 - eps) * (-math.expm1(-t)), abs=1e-13)


def test_collapsed_volume_probe(collapsed):
    _, _, lf = collapsed
    rep = hz.collapsed_volume_probe(lf.trajectories)
    d = rep.details
    assert d["class_volume"] == 0.0
    assert abs(d["V0_limit"]) < 1e-12
    i = int(np.argmin(np.abs(d["times"] - 0.01)))
    assert d["V_limit"][i] == pytest.approx(1 - math.exp(-0.01), abs=1e-12)
    assert rep.passed and d["initial_monotone"]


def test_ladder_uniqueness_identical(collapsed):
    bg, lad, lf = collapsed
    s = strictify(lad)
    lfs = ladder_flow(bg, s, 0.5, SolverConfig(K=64), sample_times=[0.01, 0.1, 0.2, 0.3, 0.4])
    rep = hz.check_ladder_uniqueness(lfs, lfs, bg, s, bg, s)
    assert rep.constant == 0.0 and rep.passed


def test_interleaving_constants_ladders():
    g = GridSpec(1, 8)
    bg = bgm.BackgroundFamily(g, 0.0, 1.0)
    zero = ScalarField.constant(g, 0.0)
    eps_a = [0.5 ** j for j in range(6)]
    eps_b = [0.7 * 0.5 ** j for j in range(6)]
    a = strictify(ApproxLadder([(e, zero) for e in eps_a]), "harmonic")
    b = strictify(ApproxLadder([(e, zero) for e in eps_b]), "geometric")
    chain, gap = hz.interleaving_certificate(bg, a, bg, b)
    assert len(chain) >= 3 and gap > 0
    for (la, ia), (lb, ib) in zip(chain, chain[1:]):
        va = (a if la == "a" else b).potentials[ia].values
        vb = (a if lb == "a" else b).potentials[ib].values
        assert (va > vb).all()


def test_comparison_check(collapsed):
    _, _, lf = collapsed
    rep = hz.check_comparison(lf, tol=1e-10)
    assert rep.passed


def test_linf_methods_and_modulus():
    g = GridSpec(1, 16)
    bg = bgm.BackgroundFamily(g, 1.0, 0.5)
    v = ScalarField.from_function(g, lambda x, y: 0.02 * np.cos(2 * np.pi * x) + 0 * y)
    tr = flow_run(bg, v, 0.3, SolverConfig(K=16))
    out = hz.linf_methods(tr, every=4)
    assert out and all(np.isfinite(r["method_I"]) and np.isfinite(r["method_II"]) for r in out)
    mod = hz.oscillation_modulus(tr.states[-1].u)
    vals = [mod[k] for k in sorted(mod)]
    assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))


def test_shift_and_gauge_residual_helpers():
    g = GridSpec(1, 8)
    bg = bgm.BackgroundFamily(g, 1.0, 0.5)
    v = ScalarField.from_function(g, lambda x, y: 0.02 * np.cos(2 * np.pi * x) + 0 * y)
    a = flow_run(bg, v, 0.2, SolverConfig(K=16))
    b = flow_run(bg, v - 0.3, 0.2, SolverConfig(K=16))
    assert hz.shift_residual(a, b, -0.3) <= 1e-12


def test_deg_upper_weighted_scenario():
    g = GridSpec(1, 32)
    bg = bgm.BackgroundFamily(g, 1.0, 1.0)
    v = ScalarField.from_function(g, lambda x, y: 0.02 * np.cos(2 * np.pi * x) + 0 * y)
    lad = smooth_ladder(bg, InitialData(v), J=3, eps0=0.5)
    lf = ladder_flow(bg, lad, 0.3, SolverConfig(K=32), sample_times=[0.1, 0.2])
    wt = bgm.builtin_weight(g, 1, lam=0.05)
    rep = hz.check_deg_upper(lf.trajectories, wt)
    assert np.isfinite(rep.constant) and rep.hypothesis_margin > 0
    assert 0 < rep.details["A"] < 1
    base = hz.check_deg_upper(lf.trajectories, wt.with_lambda(0.0))
    small = hz.check_deg_upper(lf.trajectories, wt.with_lambda(1e-4))
    assert abs(small.constant - base.constant) <= 0.05 * abs(base.constant)

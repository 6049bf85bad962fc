import math

import numpy as np
import pytest
from conftest import collapsed_closed_form, collapsed_oracle

from degflow import background as bgm
from degflow.errors import InvalidRHSError
from degflow.fields import GridSpec, HermitianField, ScalarField, complex_hessian, integrate, ma_density, min_eig
from degflow.regularize import ApproxLadder, InitialData, smooth_ladder, strictify
from degflow.solvers import (
    SolverConfig,
    elliptic_solve,
    flow_run,
    gauge_transform,
    ladder_flow,
    phi_flow_run,
    time_nodes,
)


def test_quadrature_oracle_matches_closed_form():
    for t in (0.01, 0.3, math.log(2), 1.5):
        assert collapsed_oracle(t) == pytest.approx(collapsed_closed_form(t), abs=1e-12)
    assert collapsed_oracle(math.log(2)) == pytest.approx(-math.log(2), abs=1e-12)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(dt_min=0.0)
    with pytest.raises(ValueError):
        SolverConfig(newton_tol=-1.0)


def test_time_nodes_graded_with_samples():
    nodes, base = time_nodes(1.0, 8, 2.0, sample_times=[0.3, 0.5])
    assert nodes[0] == 0.0 and nodes[-1] == 1.0
    assert 0.3 in nodes and 0.5 in nodes
    np.testing.assert_allclose(base, (np.arange(9) / 8) ** 2)
    assert (np.diff(nodes) > 0).all()


def test_elliptic_exact_solution_is_zero():
    g = GridSpec(1, 32)
    form = HermitianField.constant(g, [[1.0]]) + complex_hessian(
        ScalarField.from_function(g, lambda x, y: 0.01 * np.cos(2 * np.pi * x) * np.sin(2 * np.pi * y)))
    w, its = elliptic_solve(form, ma_density(form))
    assert its == 0 and np.abs(w.values).max() == 0.0


def test_elliptic_n1_fourier():
    g = GridSpec(1, 32)
    x = g.coords()[0]
    f = ScalarField(g, np.broadcast_to(1 + 0.1 * np.sin(2 * np.pi * x), g.shape))
    w, _ = elliptic_solve(HermitianField.identity(g), f)
    exact = -(0.1 / np.pi**2) * np.sin(2 * np.pi * x)
    assert np.abs(w.values - exact).max() <= 1e-10
    assert abs(integrate(w)) < 1e-15


def test_elliptic_rejects_bad_rhs():
    g = GridSpec(1, 16)
    with pytest.raises(InvalidRHSError):
        elliptic_solve(HermitianField.identity(g), ScalarField.constant(g, 2.0))
    with pytest.raises(InvalidRHSError):
        elliptic_solve(HermitianField.identity(g), ScalarField.constant(g, -1.0))


def test_elliptic_n2_postconditions():
    g = GridSpec(2, 8)
    x1 = g.coords()[0]
    f = ScalarField(g, np.broadcast_to(1 + 0.05 * np.sin(2 * np.pi * x1), g.shape))
    w, _ = elliptic_solve(HermitianField.identity(g), f)
    G = HermitianField.identity(g) + complex_hessian(w)
    assert np.abs(np.log(ma_density(G).values) - np.log(f.values)).max() <= 1e-11
    assert min_eig(G).min() > 0
    assert abs(integrate(w)) < 1e-14


def _collapsed_bg(N=16, eps=0.0):
    return bgm.BackgroundFamily(GridSpec(1, N), 0.0, 1.0, eps=eps)


def test_collapsed_flow_first_order():
    T = math.log(2)
    ref = collapsed_oracle(T)
    bg = _collapsed_bg(8)
    zero = ScalarField.constant(bg.grid, 0.0)
    errs = []
    for K in (64, 128, 256):
        tr = flow_run(bg, zero, T, SolverConfig(K=K))
        u = tr.states[-1].u
        assert np.ptp(u.values) < 1e-14
        errs.append(abs(u.values.flat[0] - ref))
    rates = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert all(0.9 <= r <= 1.1 for r in rates), rates


def test_stationary_flow_is_fixed():
    g = GridSpec(1, 16)
    h = ScalarField.from_function(g, lambda x, y: 0.01 * np.cos(2 * np.pi * x) + 0 * y)
    bg = bgm.BackgroundFamily(g, 1.0, 1.0, psi=h, h_inf=h)
    bg = bgm.BackgroundFamily(g, 1.0, 1.0, psi=h, h_inf=h, Omega=ma_density(bg.omega_inf))
    tr = flow_run(bg, ScalarField.constant(g, 0.0), 0.5, SolverConfig(K=32))
    assert max(s.u.sup_norm() for s in tr.states) <= 1e-12
    assert max(s.u_t.sup_norm() for s in tr.states) <= 1e-12


def _smooth_bg(N=16):
    g = GridSpec(1, N)
    Om = ScalarField.from_function(g, lambda x, y: 1 + 0.2 * np.sin(2 * np.pi * y) + 0 * x)
    return bgm.BackgroundFamily(g, 1.0, 0.5, Omega=Om)


def _v(g, a=0.02):
    return ScalarField.from_function(g, lambda x, y: a * np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y))


def test_flow_invariants_and_shift():
    bg = _smooth_bg()
    v = _v(bg.grid)
    cfg = SolverConfig(K=64)
    a = flow_run(bg, v, 0.5, cfg, sample_times=[0.1, 0.25])
    b = flow_run(bg, v + 0.7, 0.5, cfg, sample_times=[0.1, 0.25])
    log_om = np.log(bg.Omega.values)
    for sa, sb in zip(a.states, b.states):
        assert sa.t == sb.t
        assert np.abs(sb.u.values - sa.u.values - 0.7 * math.exp(-sa.t)).max() <= 1e-10
        assert sa.consistency_defect(log_om) <= 1e-10
        assert min_eig(sa.gtilde).min() > 0
        # mass identity
        assert integrate(ma_density(sa.gtilde)) == pytest.approx(integrate(ma_density(bgm.omega_t(bg, sa.t))),
                                                                   abs=1e-8)
    assert a.state_at(0.1).t == 0.1 and a.index_of(0.25) >= 0


def test_comparison_principle():
    bg = _smooth_bg()
    g = bg.grid
    v = _v(g)
    bump = ScalarField.from_function(g, lambda x, y: 0.005 * (1 + np.sin(2 * np.pi * x)) + 0 * y)
    cfg = SolverConfig(K=32)
    lo = flow_run(bg, v, 0.4, cfg)
    hi = flow_run(bg, v + bump, 0.4, cfg)
    for sl, sh in zip(lo.states, hi.states):
        assert (sh.u.values >= sl.u.values - 1e-12).all()


def test_gauge_transform_algebra():
    bg = _smooth_bg()
    v = _v(bg.grid)
    tr = flow_run(bg, v, 0.3, SolverConfig(K=32))
    phi = gauge_transform(tr, v, "to_phi")
    assert np.abs(phi.initial.u.values).max() == 0.0
    back = gauge_transform(phi, v, "to_u")
    for s0, s1 in zip(tr.states, back.states):
        assert np.abs(s0.u.values - s1.u.values).max() <= 1e-14
        assert np.abs(s0.u_t.values - s1.u_t.values).max() <= 1e-14
    zero = ScalarField.constant(bg.grid, 0.0)
    same = gauge_transform(tr, zero, "to_phi")
    assert all(np.array_equal(a.u.values, b.u.values) for a, b in zip(tr.states, same.states))
    with pytest.raises(ValueError):
        gauge_transform(tr, v, "sideways")


def test_phi_flow_matches_u_flow():
    bg = _smooth_bg()
    v = _v(bg.grid)
    cfg = SolverConfig(K=32)
    tr = flow_run(bg, v, 0.3, cfg)
    ph = phi_flow_run(bg, v, 0.3, cfg)
    for su, sp in zip(tr.states, ph.states):
        assert np.abs(su.u.values - (sp.u.values + math.exp(-su.t) * v.values)).max() <= 1e-10


def test_constants_ladder_gaps_exact():
    bg = _collapsed_bg(8)
    g = bg.grid
    zero = ScalarField.constant(g, 0.0)
    lad = strictify(ApproxLadder([(0.5, zero), (0.5 - 1e-9, zero), (0.5 - 2e-9, zero)]))
    # same background on every rung up to 2e-9 in eps
    lf = ladder_flow(bg, lad, 0.4, SolverConfig(K=32), threads=2)
    for i, t in enumerate(lf.times):
        for j in range(2):
            expected = math.exp(-t) * (1 / (j + 1) - 1 / (j + 2))
            assert lf.gaps[i, j] == pytest.approx(expected, abs=1e-8)
        assert np.array_equal(lf.weak[i].values, np.minimum.reduce([tr.states[i].u.values
                                                                    for tr in lf.trajectories]))


def test_single_rung_weak_flow():
    bg = _smooth_bg(8)
    lad = ApproxLadder([(0.0, _v(bg.grid))])
    lf = ladder_flow(bg, lad, 0.2, SolverConfig(K=16))
    assert lf.gaps.shape[1] == 0
    for w, s in zip(lf.weak, lf.finest.states):
        assert np.array_equal(w.values, s.u.values)


def test_collapsed_rung_gaps_decrease():
    bg = _collapsed_bg(8)
    lad = smooth_ladder(bg, InitialData(ScalarField.constant(bg.grid, 0.0)), J=5)
    lf = ladder_flow(bg, lad, 0.2, SolverConfig(K=32), sample_times=[0.1])
    i = int(np.argmin(np.abs(lf.times - 0.1)))
    gaps = lf.gaps[i]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_thread_count_does_not_change_results():
    bg = _collapsed_bg(8)
    lad = smooth_ladder(bg, InitialData(ScalarField.constant(bg.grid, 0.0)), J=3)
    a = ladder_flow(bg, lad, 0.2, SolverConfig(K=16), threads=1)
    b = ladder_flow(bg, lad, 0.2, SolverConfig(K=16), threads=4)
    for ta, tb in zip(a.trajectories, b.trajectories):
        for sa, sb in zip(ta.states, tb.states):
            assert np.array_equal(sa.u.values, sb.u.values)

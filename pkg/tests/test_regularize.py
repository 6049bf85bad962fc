import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from degflow import background as bgm
from degflow.errors import InvalidInitialDataError, InvalidMeasureError, LadderFailureError
from degflow.fields import GridSpec, ScalarField, complex_hessian, integrate, lp_norm, ma_density
from degflow.regularize import (
    InitialData,
    attenuation,
    jittered_radius,
    kernel_multiplier,
    measure_ladder,
    mollify,
    mollify_measure,
    single_ladder,
    smooth_ladder,
    strictify,
)


def test_kernel_is_positive_mass_one():
    g = GridSpec(1, 32)
    m = kernel_multiplier(g, 0.05, half=False)
    assert m.min() >= 0 and m.max() <= 1
    assert m[(0,) * g.ndim] == pytest.approx(1.0, abs=1e-15)
    c = ScalarField.constant(g, 2.5)
    np.testing.assert_allclose(mollify(c, 0.1).values, 2.5, atol=1e-14)


def test_single_mode_attenuation_oracle():
    g = GridSpec(1, 64)
    r = 0.03
    v = ScalarField.from_function(g, lambda x, y: np.cos(2 * np.pi * x) + 0 * y)
    out = mollify(v, r)
    a = attenuation(g, r)
    np.testing.assert_allclose(out.values, a * v.values, atol=1e-13)
    # continuum Gaussian: exp(-(2 pi r)^2 / 2)
    assert a == pytest.approx(math.exp(-0.5 * (2 * math.pi * r) ** 2), rel=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 0.2))
def test_mollify_bounds_and_linearity(seed, r):
    g = GridSpec(1, 16)
    rng = np.random.default_rng(seed)
    a = ScalarField(g, rng.normal(size=g.shape))
    b = ScalarField(g, rng.uniform(size=g.shape))
    ma, mb = mollify(a, r), mollify(b, r)
    assert ma.max() <= a.max() and ma.min() >= a.min()
    assert mb.min() >= 0
    np.testing.assert_allclose(mollify(a * 2.0 + b, r).values, 2.0 * ma.values + mb.values, atol=1e-12)
    assert integrate(ma) == pytest.approx(integrate(a), abs=1e-12)


def test_jitter_is_small_and_deterministic():
    assert jittered_radius(0.05, 0, 3) == 0.05
    r1 = jittered_radius(0.05, 7, 3)
    assert r1 == jittered_radius(0.05, 7, 3)
    assert abs(r1 / 0.05 - 1) <= 0.01


def test_initial_data_validation():
    g = GridSpec(1, 32)
    bg = bgm.BackgroundFamily(g, 1.0, 1.0)
    ok = InitialData(ScalarField.from_function(g, lambda x, y: np.cos(2 * np.pi * x) / (8 * np.pi**2) + 0 * y))
    assert ok.validate(bg) == pytest.approx(1 - 1 / 8, abs=1e-12)
    bad = InitialData(ok.v * 20.0)
    with pytest.raises(InvalidInitialDataError):
        bad.validate(bg)
    with pytest.raises(InvalidInitialDataError):
        InitialData(ScalarField(g, np.full(g.shape, np.inf)))


def test_constant_ladder_for_zero_data():
    g = GridSpec(1, 16)
    bg = bgm.BackgroundFamily(g, 0.0, 1.0)
    lad = smooth_ladder(bg, InitialData(ScalarField.constant(g, 0.0)), J=4)
    assert lad.eps == [1.0, 0.5, 0.25, 0.125, 0.0625]
    for _, v in lad.entries:
        assert np.abs(v.values).max() == 0.0
    lad.check()


def test_smooth_ladder_cos_mode():
    g = GridSpec(1, 64)
    bg = bgm.BackgroundFamily(g, 1.0, 1.0)
    amp = 1 / (8 * np.pi**2)
    v = ScalarField.from_function(g, lambda x, y: amp * np.cos(2 * np.pi * x) + 0 * y)
    lad = smooth_ladder(bg, InitialData(v), J=5)
    lad.check()
    assert lad.monotonicity_defect() <= 1e-12
    errs = []
    for j, (_, vj) in enumerate(lad.entries):
        a = attenuation(g, lad.info["radii"][j])
        bound = amp * (1 - a) + lad.constants[j]
        err = (vj - v).sup_norm()
        assert err <= bound + 1e-14
        assert (vj.values >= v.values - 1e-14).all()
        errs.append(err)
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert all(m > 0 for m in lad.margins)


def test_nonsmooth_ladder_l1_convergence():
    g = GridSpec(1, 64)
    bg = bgm.BackgroundFamily(g, 1.0, 1.0)
    w = bgm.builtin_weight(g, 1).w
    v = ScalarField(g, 0.1 * np.maximum(w.values, -1.0))
    init = InitialData(v, smooth=False)
    init.validate(bg)
    lad = smooth_ladder(bg, init, J=4, eps0=0.5)
    lad.check()
    l1 = [lp_norm(vj - v, 1) for _, vj in lad.entries]
    sup = [(vj - v).sup_norm() for _, vj in lad.entries]
    assert all(b <= a for a, b in zip(l1, l1[1:]))
    # the radius floor stops sup-norm convergence at the kink
    assert sup[-1] > 0.1 * sup[0]


def test_ladder_failure_names_rung():
    g = GridSpec(1, 32)
    bg = bgm.BackgroundFamily(g, 0.0, 1.0)
    v = ScalarField.from_function(g, lambda x, y: 0.02 * np.cos(2 * np.pi * x) + 0 * y)
    with pytest.raises(LadderFailureError) as exc:
        smooth_ladder(bg, InitialData(v), J=6, eps0=1.0)
    assert exc.value.rung is not None and exc.value.rung > 0


def test_strictify_examples():
    g = GridSpec(1, 16)
    bg = bgm.BackgroundFamily(g, 0.0, 1.0)
    lad = smooth_ladder(bg, InitialData(ScalarField.constant(g, 0.0)), J=3)
    s = strictify(lad)
    assert s.strict
    assert [v.values.flat[0] for v in s.potentials] == [1.0, 0.5, 1 / 3, 0.25]
    s2 = strictify(s)
    assert all(float((b.values - a.values).max()) < 0 for a, b in zip(s2.potentials, s2.potentials[1:]))
    one = strictify(single_ladder(bgm.BackgroundFamily(g, 1.0, 1.0), InitialData(ScalarField.constant(g, 0.3))))
    assert one.potentials[0].values.flat[0] == pytest.approx(1.3)
    geo = strictify(lad, shift="geometric")
    assert [v.values.flat[0] for v in geo.potentials] == [1.0, 0.5, 0.25, 0.125]


def test_mollify_measure_bounds():
    g = GridSpec(1, 64)
    np.testing.assert_allclose(mollify_measure(ScalarField.constant(g, 3.0), 0.5).values, 3.0)
    dens = ScalarField(g, np.exp(bgm.builtin_weight(g, 1).w.values))
    prev = None
    for eps in (1.0, 0.5, 0.25, 0.125):
        m = mollify_measure(dens, eps)
        assert m.min() >= 0 and m.max() <= 1.0
        for p in (1, 2, 4):
            assert lp_norm(m, p) <= lp_norm(dens, p) + 1e-14
        d = lp_norm(m - dens, 1)
        if prev is not None:
            assert d < prev
        prev = d
    with pytest.raises(InvalidMeasureError):
        mollify_measure(ScalarField.constant(g, -1.0), 0.1)


def test_mollify_measure_step_l1():
    g = GridSpec(1, 128)
    x, y = g.coords()
    step = ScalarField(g, np.broadcast_to(np.where((x > 0.25) & (x < 0.75), 2.0, 1.0) + 0 * y, g.shape))
    for eps in (0.4, 0.2, 0.1):
        r = 0.05 * eps
        d = lp_norm(mollify_measure(step, eps) - step, 1)
        # two interfaces of length 1, jump 1, kernel mean |offset| = r sqrt(2/pi)
        assert d <= 2 * 1.0 * r * math.sqrt(2 / math.pi) * 1.1 + 2 * g.spacing


def test_measure_ladder_constant_target():
    g = GridSpec(1, 16)
    bg = bgm.BackgroundFamily(g, 1.0, 1.0)
    lad = measure_ladder(bg, ScalarField.constant(g, 1.0), [0.5, 0.25, 0.125])
    for (eps, v), C in zip(lad.entries, lad.info["C_eps"]):
        assert C == pytest.approx(1 + eps)
        assert np.ptp(v.values) < 1e-12
    lad.check()


def test_measure_ladder_recovers_planted_solution():
    g = GridSpec(1, 32)
    bg = bgm.BackgroundFamily(g, 1.0, 1.0)
    vstar = ScalarField.from_function(g, lambda x, y: 0.01 * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y))
    e0 = 0.5
    target = ma_density(bg.with_eps(e0).omega_eps + complex_hessian(vstar))
    lad = measure_ladder(bg, target, [e0], r_scale=0.0)
    v = lad.potentials[0]
    diff = v - vstar
    assert np.ptp(diff.values) < 1e-10


def test_measure_ladder_upper_bound():
    g = GridSpec(1, 32)
    bg = bgm.BackgroundFamily(g, 1.0, 1.0)
    x, y = g.coords()
    target = ScalarField(g, np.broadcast_to(1.0 + 0.5 * np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y), g.shape))
    lad = measure_ladder(bg, target, [0.5, 0.25, 0.125, 0.0625], r_scale=0.05)
    lad.check()
    Cs = lad.info["C_eps"]
    for (eps, v), C in zip(lad.entries, Cs):
        dens = ma_density(bg.with_eps(eps).omega_eps + complex_hessian(v))
        assert dens.max() <= 1.5 * C + 1e-9
    # class volumes 1 + eps converge to the target mass 1
    dev = [abs(C - 1.0) for C in Cs]
    assert all(b < a for a, b in zip(dev, dev[1:]))

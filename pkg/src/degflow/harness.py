"""Runtime verification of the flow's a priori bounds, identities and limits.

Every check returns an :class:`EstimateReport` (or a small result object for
identity residuals). Form hypotheses are re-evaluated on the grid inside each
check rather than taken on trust from the background module.
"""

import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from . import background as bgmod
from .errors import (
    HypothesisNotSatisfied,
    InterleavingNotFoundError,
    NeedSamplesError,
    NoDeltaError,
)
from .fields import (
    HermitianField,
    ScalarField,
    integrate,
    inverse,
    ma_density,
    min_eig,
    mixed_density,
    trace_hessian,
    trace_pair,
)

UNIFORM_REL = 0.1


def eta(N, dt, c1=1.0):
    """Discrete maximum-principle tolerance ``c1 (N^-2 + dt)``."""
    return c1 * (N ** -2.0 + dt)


def uniformity(constants, rel=UNIFORM_REL, floor=1e-3, last=3, growth_only=False):
    """Relative drifts ``(c_{j+1} - c_j) / max(|c_j|, floor)`` and whether the last ones are small.

    With ``growth_only`` only increases count against uniformity.
    """
    c = [float(x) for x in constants]
    drifts = [(b - a) / max(abs(a), floor) for a, b in zip(c, c[1:])]
    tail = drifts[-(last - 1):] if last > 1 else []
    if growth_only:
        ok = all(d <= rel for d in tail)
    else:
        ok = all(abs(d) <= rel for d in tail)
    return ok and all(np.isfinite(c)), drifts


@dataclass
class EstimateReport:
    name: str
    constant: float
    per_rung: List[float]
    hypothesis_margin: float
    passed: bool
    tolerance: float = 0.0
    masked_fraction: float = 0.0
    rows: List[dict] = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def summary_line(self):
        flag = "PASS" if self.passed else "FAIL"
        return (f"{flag} {self.name}: C={self.constant:.6g} margin={self.hypothesis_margin:.3g} "
                f"rungs={len(self.per_rung)}")


def _rows(name, j, pairs, margin, passed):
    return [dict(check=name, rung=j, t=t, value=v, margin=margin, passed=passed) for t, v in pairs]


def _finalize(name, per_rung, margin, uniform_ok, rows, tol, **kw):
    const = max(per_rung) if per_rung else math.nan
    passed = bool(np.isfinite(const) and margin > 0 and uniform_ok)
    for r in rows:
        r["passed"] = passed
    return EstimateReport(name, float(const), [float(c) for c in per_rung], float(margin),
                          passed, tol, rows=rows, **kw)


def _floor(trajs):
    tr = trajs[-1]
    return eta(tr.states[0].u.grid.N, tr.dt_max_used)


# -- short-time bounds --------------------------------------------------


def check_upper_u(trajs, include_initial=True):
    """``u <= C`` for all time, uniformly along the ladder."""
    per, rows = [], []
    for j, tr in enumerate(trajs):
        pairs = [(s.t, s.u.max()) for s in tr.states]
        if include_initial:
            pairs.insert(0, (0.0, tr.initial.u.max()))
        per.append(max(v for _, v in pairs))
        rows += _rows("upper_u", j, pairs, math.inf, True)
    ok, drifts = uniformity(per, floor=max(_floor(trajs), 1e-3), last=2, growth_only=True)
    return _finalize("upper_u", per, math.inf, ok, rows, UNIFORM_REL, details={"drifts": drifts})


def check_ut_upper(trajs):
    """``(e^t - 1) u_t <= C``."""
    per, rows = [], []
    for j, tr in enumerate(trajs):
        pairs = [(s.t, float((math.expm1(s.t) * s.u_t.values).max())) for s in tr.states]
        per.append(max(v for _, v in pairs))
        rows += _rows("ut_upper", j, pairs, math.inf, True)
    ok, drifts = uniformity(per, floor=max(_floor(trajs), 1e-3), growth_only=True)
    return _finalize("ut_upper", per, math.inf, ok, rows, UNIFORM_REL, details={"drifts": drifts})


def _delta_margin(bg, lambda1, delta, s_values):
    return min(min_eig(bgmod.delta_form(bg, lambda1, delta, s)).min() for s in s_values)


def check_ut_lower(trajs, lambda1, lambda2, delta=None, n_samples=64):
    """``u_t >= -C/(e^s - 1)`` on the translated window ``s = t - lambda1 in (0, lambda2 - lambda1]``.

    ``delta`` is chosen on the unperturbed background when not given and
    re-verified on every rung.
    """
    if delta is None:
        delta = bgmod.choose_delta(trajs[0].bg.with_eps(0.0), lambda1, lambda2, n_samples)
    s_grid = np.linspace(0.0, lambda2 - lambda1, n_samples)
    per, combs, margins, rows = [], [], [], []
    for j, tr in enumerate(trajs):
        m = _delta_margin(tr.bg, lambda1, delta, s_grid)
        margins.append(m)
        if not m > 0:
            raise NoDeltaError(f"rung {j}: delta-form margin {m:.3e}", worst_t=None, worst_eig=m)
        pairs, cmin = [], math.inf
        for s in tr.states:
            if not lambda1 < s.t <= lambda2 + 1e-12:
                continue
            sh = s.t - lambda1
            q = math.expm1(sh) * s.u_t.values
            pairs.append((s.t, float((-q).max())))
            cmin = min(cmin, float(((1 - delta) * q + delta * s.u.values).min()))
        if not pairs:
            raise NeedSamplesError("no samples inside the translated window")
        per.append(max(v for _, v in pairs))
        combs.append(cmin)
        rows += _rows("ut_lower", j, pairs, m, True)
    ok, drifts = uniformity(per, floor=max(_floor(trajs), 1e-3))
    return _finalize("ut_lower", per, min(margins), ok, rows, UNIFORM_REL,
                     details={"delta": delta, "combination_min": combs, "drifts": drifts,
                              "window": (lambda1, lambda2)})


# -- transformed identities -------------------------------------------------


@dataclass
class ResidualNorms:
    which: str
    times: np.ndarray
    sup: np.ndarray
    l2: np.ndarray

    @property
    def max_sup(self):
        return float(self.sup.max()) if len(self.sup) else math.nan


def residual_transformed_eqs(traj, which, lambda1=0.0, delta=None, A=None, window=None):
    """Pointwise ``LHS - RHS`` of a transformed evolution identity at stored samples.

    ``which`` is one of ``eq1``, ``eq2``, ``eq3``, ``delta_comb``. Time
    derivatives are centred (nonuniform) differences of stored samples; the
    two end samples of the window are used only as stencil points.
    """
    bg = traj.bg
    n = bg.n
    states = [s for s in traj.states if s.t > lambda1 + 1e-14]
    if window is not None:
        a, b = window
        states = [s for s in states if a - 1e-12 <= s.t <= b + 1e-12]
    if len(states) < 3:
        raise NeedSamplesError(f"need >= 3 samples for {which}, have {len(states)}")
    om = bgmod.omega_t(bg, lambda1)
    om_inf = bg.omega_inf
    if which == "delta_comb" and delta is None:
        raise ValueError("delta_comb needs delta")
    if which == "eq3" and A is None:
        raise ValueError("eq3 needs A")

    def quantity(s):
        sh = s.t - lambda1
        ut, u = s.u_t.values, s.u.values
        if which == "eq1":
            return math.expm1(sh) * ut
        if which == "eq2":
            return math.expm1(sh) * ut - u
        if which == "eq3":
            return (math.exp(sh) - A) * ut - A * u
        return (1 - delta) * math.expm1(sh) * ut + delta * u

    def source(s):
        sh = s.t - lambda1
        g = s.gtilde
        if which == "eq1":
            diff = HermitianField(g.grid, om.values - om_inf.values)
            return -(-math.expm1(-sh)) * trace_pair(g, diff).values + s.u_t.values
        if which == "eq2":
            return n - trace_pair(g, om).values
        if which == "eq3":
            form = HermitianField(g.grid, om.values - (1 - A) * om_inf.values)
            return A * n - trace_pair(g, form).values
        form = bgmod.delta_form(bg, lambda1, delta, sh)
        return trace_pair(g, form).values + s.u_t.values - n * delta

    ts = np.array([s.t for s in states])
    Q = np.stack([quantity(s) for s in states])
    dQ = np.gradient(Q, ts, axis=0, edge_order=2)
    sups, l2s = [], []
    for i in range(1, len(states) - 1):
        s = states[i]
        lap = trace_hessian(inverse(s.gtilde), ScalarField(s.u.grid, Q[i])).values
        r = dQ[i] - lap - source(s)
        sups.append(float(np.abs(r).max()))
        l2s.append(float(np.sqrt(np.sum(r * r) / r.size * s.u.grid.volume)))
    return ResidualNorms(which, ts[1:-1], np.array(sups), np.array(l2s))


# -- weighted and lower bounds -------------------------------------------


def check_deg_upper(trajs, wt, A=None, C0_max=None):
    """Weighted upper bound ``(e^t - A) u_t - A u + lambda w <= C`` off the exclusion mask."""
    bg0 = trajs[0].bg.with_eps(0.0)
    if A is None:
        A = bgmod.admissible_lambda_A(bg0, wt).A
    keep = ~wt.mask
    lw = wt.lam * wt.w.values
    per, margins, rows, C0s, implied = [], [], [], [], []
    for j, tr in enumerate(trajs):
        m = float(min_eig(bgmod.weighted_form(tr.bg, wt, A)).values[keep].min())
        margins.append(m)
        first = tr.states[0]
        c0 = float(((1 - A) * first.u_t.values + lw)[keep].max())
        C0s.append(c0)
        pairs = []
        for s in tr.states:
            P = (math.exp(s.t) - A) * s.u_t.values - A * s.u.values + lw
            pairs.append((s.t, float(P[keep].max())))
        cj = max(v for _, v in pairs)
        per.append(cj)
        usup = max(s.u.max() for s in tr.states)
        Cp = cj + A * usup
        gap = min(float((((-lw + Cp) / (math.exp(s.t) - A)) - s.u_t.values)[keep].min())
                  for s in tr.states)
        implied.append(gap)
        rows += _rows("deg_upper", j, pairs, m, True)
    if C0_max is not None and max(C0s) > C0_max:
        raise HypothesisNotSatisfied(
            f"initial slope condition fails: measured C0={max(C0s):.4g} > {C0_max:g}",
            report=dict(C0=C0s),
        )
    margin = min(margins) if margins else math.nan
    ok, drifts = uniformity(per, floor=max(_floor(trajs), 1e-3))
    rep = _finalize("deg_upper", per, margin, ok, rows, UNIFORM_REL,
                    masked_fraction=wt.masked_fraction,
                    details={"A": A, "lambda": wt.lam, "ratio": wt.lam / (1 - A), "C0": C0s,
                             "implied_bound_margin": implied, "drifts": drifts})
    return rep


def initial_density_floor(tr):
    """``min ma_density(initial form) / Omega`` for one rung."""
    return float((ma_density(tr.initial.gtilde).values / tr.bg.Omega.values).min())


def check_lower_scenario(trajs, A=None, margin_c=0.5, c0_min=0.5):
    """``u_t >= -C`` on ``t <= ln(A - margin_c)`` under an initial volume floor ``c0``."""
    c0s = [initial_density_floor(tr) for tr in trajs]
    if not min(c0s) >= c0_min:
        raise HypothesisNotSatisfied(
            f"initial measure floor {min(c0s):.4g} below required c0={c0_min:g}",
            report=dict(c0=c0s),
        )
    bg0 = trajs[0].bg.with_eps(0.0)
    if A is None:
        choice = bgmod.choose_A_lower(bg0, margin_c=margin_c)
        A, t_win = choice.A, choice.t_window
    else:
        t_win = math.log(A - margin_c)
    per, margins, rows, excess, ubounds = [], [], [], [], []
    for j, tr in enumerate(trajs):
        m = min_eig(bgmod.lower_form(tr.bg, A)).min()
        margins.append(m)
        init = tr.initial
        P0 = float(((1 - A) * init.u_t.values - A * init.u.values).max())
        pairs, Pmax, umin, umax = [], -math.inf, init.u.min(), init.u.max()
        for s in tr.states:
            if s.t > t_win + 1e-12:
                continue
            pairs.append((s.t, float((-s.u_t.values).max())))
            Pmax = max(Pmax, float(((math.exp(s.t) - A) * s.u_t.values - A * s.u.values).max()))
            umin, umax = min(umin, s.u.min()), max(umax, s.u.max())
        if not pairs:
            raise NeedSamplesError("no samples inside the lower-bound window")
        per.append(max(v for _, v in pairs))
        excess.append(Pmax - P0)
        ubounds.append((umin, umax))
        rows += _rows("lower_scenario", j, pairs, m, True)
    ok, drifts = uniformity(per, floor=max(_floor(trajs), 1e-3))
    return _finalize("lower_scenario", per, min(margins), ok, rows, UNIFORM_REL,
                     details={"A": A, "t_window": t_win, "c0": c0s, "max_principle_excess": excess,
                              "u_bounds": ubounds, "drifts": drifts})


def check_weak_convergence(traj, test_functions, powers, wt=None, thresholds=(2.0, 4.0, 8.0, 16.0),
                           conv_tol=1e-2, last=4):
    """Gaps ``|int G g_t^j - int G g_0^j|`` as ``t -> 0+`` for each test function and power.

    A case passes when the gaps over the ``last`` smallest sample times
    decrease monotonically and the smallest is below ``conv_tol`` times the
    gap at the largest sample time.
    """
    states = sorted(traj.states, key=lambda s: -s.t)
    init = traj.initial.gtilde
    rows, cases = [], []
    masks = [("full", None)]
    if wt is not None:
        masks += [(f"M={M:g}", wt.w.values > -M) for M in thresholds]
    for gi, G in enumerate(test_functions):
        for p in powers:
            d0 = G.values * mixed_density(init, p).values
            for label, keep in masks:
                def integ(a):
                    if keep is None:
                        return float(np.sum(a) / a.size)
                    return float(np.sum(np.where(keep, a, 0.0)) / a.size)

                ref = integ(d0)
                gaps = [abs(integ(G.values * mixed_density(s.gtilde, p).values) - ref) for s in states]
                ts = [s.t for s in states]
                tail = gaps[-last:]
                mono = all(b <= a for a, b in zip(tail, tail[1:]))
                small = gaps[-1] <= conv_tol * gaps[0] if gaps[0] > 0 else gaps[-1] <= conv_tol
                cases.append(dict(test=gi, power=p, mask=label, times=ts, gaps=gaps,
                                  monotone=mono, converged=bool(small)))
                name = f"weak_conv[G{gi},j={p},{label}]"
                rows += _rows(name, traj.rung or 0, list(zip(ts, gaps)), math.inf, bool(mono and small))
    full = [c for c in cases if c["mask"] == "full"]
    passed = all(c["monotone"] and c["converged"] for c in full)
    worst = max(c["gaps"][-1] for c in cases)
    rep = EstimateReport("weak_convergence", worst, [worst], math.inf, passed, conv_tol, rows=rows,
                         masked_fraction=wt.masked_fraction if wt is not None else 0.0,
                         details={"cases": cases})
    return rep


# -- ladder-level statements ------------------------------------------------


def _form_leq(bg_small, eps_small, bg_big, eps_big):
    """min eigenvalue of ``eps_big omega1_big - eps_small omega1_small``."""
    diff = HermitianField(bg_big.grid, eps_big * bg_big.omega1.values - eps_small * bg_small.omega1.values)
    return min_eig(diff).min()


def interleaving_certificate(bg_a, ladder_a, bg_b, ladder_b):
    """Greedy alternating chain ``v^a_{j1} > v^b_{a1} > v^a_{j2} > ...`` (strict, pointwise).

    Each step also requires the perturbation ``eps omega_1`` to be ordered the
    same way. Returns the index chain ``[(ladder, index), ...]`` and the
    smallest strict gap.
    """
    lad = {"a": (bg_a, ladder_a), "b": (bg_b, ladder_b)}
    chain = [("a", 0)]
    gaps = []
    nxt = {"a": 1, "b": 0}
    cur = ("a", 0)
    while True:
        other = "b" if cur[0] == "a" else "a"
        bg_c, lc = lad[cur[0]]
        bg_o, lo = lad[other]
        ec, vc = lc.entries[cur[1]]
        found = None
        for k in range(nxt[other], len(lo.entries)):
            eo, vo = lo.entries[k]
            g = float((vc.values - vo.values).min())
            if g > 0 and _form_leq(bg_o, eo, bg_c, ec) >= 0:
                found = (k, g)
                break
        if found is None:
            break
        k, g = found
        chain.append((other, k))
        gaps.append(g)
        nxt[other] = k + 1
        cur = (other, k)
    if len(chain) < 3:
        raise InterleavingNotFoundError(
            f"could not interleave the ladders (chain {chain}); strictify them first?"
        )
    return chain, min(gaps)


def check_ladder_uniqueness(lf_a, lf_b, bg_a, ladder_a, bg_b, ladder_b):
    """Compare two weak-flow limits and certify their ladders interleave."""
    chain, gmin = interleaving_certificate(bg_a, ladder_a, bg_b, ladder_b)
    rows, diffs, tols = [], [], []
    for i, t in enumerate(lf_a.times):
        d = float(np.abs(lf_a.weak[i].values - lf_b.weak[i].values).max())
        ga = lf_a.gaps[i, -1] if lf_a.gaps.shape[1] else 0.0
        gb = lf_b.gaps[i, -1] if lf_b.gaps.shape[1] else 0.0
        tol = 2.0 * max(ga, gb)
        diffs.append(d)
        tols.append(tol)
        rows.append(dict(check="uniqueness", rung=-1, t=float(t), value=d, margin=tol - d, passed=d <= tol))
    passed = all(r["passed"] for r in rows)
    return EstimateReport("uniqueness", max(diffs), [max(diffs)], gmin, passed, 2.0, rows=rows,
                          details={"certificate": chain, "diffs": diffs, "tolerances": tols})


def check_comparison(lf, tol):
    """Ladder ordering is inherited by the flows: ``max (u_{j+1} - u_j) <= tol``."""
    rows, worst = [], -math.inf
    trajs = lf.trajectories
    for i, t in enumerate(lf.times):
        m = max((float((b.states[i].u.values - a.states[i].u.values).max())
                 for a, b in zip(trajs, trajs[1:])), default=-math.inf)
        worst = max(worst, m)
        rows.append(dict(check="comparison", rung=-1, t=float(t), value=m, margin=tol - m, passed=m <= tol))
    passed = worst <= tol
    return EstimateReport("comparison", worst, [worst], tol - worst, passed, tol, rows=rows)


def collapsed_volume_probe(trajs):
    """Total volume ``V(t)`` per rung and its extrapolated ladder limit.

    Volumes are polynomials of degree ``n`` in ``eps`` on this stage, so a
    degree-``n`` fit through the finest ``n + 1`` rungs gives the limit.
    """
    bg = trajs[0].bg
    n = bg.n
    grid = bg.grid
    times = trajs[-1].times
    V = np.array([[integrate(ma_density(s.gtilde)) for s in tr.states] for tr in trajs])
    V0 = np.array([integrate(ma_density(tr.initial.gtilde)) for tr in trajs])
    eps = np.array([tr.bg.eps for tr in trajs])
    class_volume = float(np.linalg.det(bg.A0).real * grid.volume)
    if len(trajs) >= n + 1:
        sel = slice(len(trajs) - n - 1, len(trajs))
        coef = np.polyfit(eps[sel], V[sel], n)
        V_lim = coef[-1]
        V0_lim = float(np.polyfit(eps[sel], V0[sel], n)[-1])
    else:
        V_lim = V[-1]
        V0_lim = float(V0[-1])
    rows = [dict(check="volume", rung=j, t=float(t), value=float(V[j, i]), margin=float(V[j, i]),
                 passed=bool(V[j, i] > 0)) for j in range(len(trajs)) for i, t in enumerate(times)]
    rows += [dict(check="volume_limit", rung=-1, t=float(t), value=float(V_lim[i]), margin=float(V_lim[i]),
                  passed=bool(V_lim[i] > 0)) for i, t in enumerate(times)]
    positive = bool((V_lim > 0).all() and (V > 0).all())
    mono = bool(all(b <= a for a, b in zip(V0, V0[1:])))
    passed = positive and class_volume == 0.0 and mono
    return EstimateReport("collapsed_volume", float(V_lim.min()), list(V0), float(V_lim.min()), passed,
                          0.0, rows=rows,
                          details={"times": times, "V": V, "V_limit": V_lim, "V0": V0, "V0_limit": V0_lim,
                                   "class_volume": class_volume, "initial_monotone": mono})


# -- empirical L-infinity and continuity probes -----------------------------


def linf_methods(traj, cfg=None, every=1):
    """Two routes to an L-infinity constant for ``u`` per sample time.

    Method I: oscillation of ``u`` plus the volume floor
    ``|log(V(t) / int Omega)|`` (which pins the mean of ``u + u_t``).
    Method II: solve ``(omega_t + i dd-bar w)^n = C f Omega`` with
    ``f = e^{u + u_t}`` and report ``|log C| + 2 |w|_inf``.
    """
    from .solvers import elliptic_solve

    bg = traj.bg
    mass_omega = integrate(bg.Omega)
    out = []
    for s in traj.states[::every]:
        V = integrate(ma_density(s.gtilde))
        c1 = (s.u.max() - s.u.min()) + abs(math.log(V / mass_omega))
        form = bgmod.omega_t(bg, s.t)
        f = ScalarField(s.u.grid, np.exp(s.u.values + s.u_t.values) * bg.Omega.values)
        C = integrate(ma_density(form)) / integrate(f)
        w, _ = elliptic_solve(form, f * C, cfg)
        c2 = abs(math.log(C)) + 2.0 * w.sup_norm()
        out.append(dict(t=s.t, method_I=c1, method_II=c2, sup_u=s.u.sup_norm()))
    return out


def oscillation_modulus(u, shifts=(1, 2, 4, 8)):
    """``max |u(x + k h e_a) - u(x)|`` over axes ``a`` for each shift ``k``."""
    res = {}
    for k in shifts:
        res[k] = max(float(np.abs(np.roll(u.values, k, axis=a) - u.values).max())
                     for a in range(u.grid.ndim))
    return res


def shift_residual(traj_a, traj_b, c):
    """``max |u_b - u_a - c e^{-t}|`` over samples (b started from ``v + c``)."""
    return max(float(np.abs(sb.u.values - sa.u.values - c * math.exp(-sa.t)).max())
               for sa, sb in zip(traj_a.states, traj_b.states))


def gauge_residual(traj_u, traj_phi, v):
    """``max |u - (phi + e^{-t} v)|`` per sample time of two independent evolutions."""
    return [(sa.t, float(np.abs(sa.u.values - sp.u.values - math.exp(-sa.t) * v.values).max()))
            for sa, sp in zip(traj_u.states, traj_phi.states)]

"""End-to-end scenario execution: background, ladder, flows, checks, outputs."""

import logging
import math
from pathlib import Path

import numpy as np

from . import background as bgmod
from . import harness as hz
from . import io as dio
from .config import build_potential
from .errors import (
    FlowFailureError,
    HypothesisNotSatisfied,
    InvalidInitialDataError,
    LadderFailureError,
    NoDeltaError,
    NotAdmissibleError,
    NotApplicableError,
    SolveFailureError,
    WindowEmptyError,
)
from .regularize import InitialData, measure_ladder, single_ladder, smooth_ladder, strictify
from .solvers import assemble_ladder_flow, flow_run, ladder_flow, phi_flow_run

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_BOUND, EXIT_SOLVER = 0, 2, 3, 4, 5
HYPOTHESIS_ERRORS = (HypothesisNotSatisfied, NotAdmissibleError, NotApplicableError, NoDeltaError,
                     WindowEmptyError, InvalidInitialDataError)
SOLVER_ERRORS = (FlowFailureError, SolveFailureError, LadderFailureError)


class Scenario:
    """Built objects for one configuration (everything before the flows)."""

    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        self.grid = cfg.grid()
        self.bg = cfg.background(self.grid)
        ini = cfg.data["initial"]
        v = cfg.potential(ini["v"], self.grid, "initial", "v")
        self.init = InitialData(v, dict(ini.get("measure_tags", {})), smooth=bool(ini["smooth"]))
        self.init.validate(self.bg, psh_tol=float(ini["psh_tol"]))
        self.solver = cfg.solver()
        self.T_end = float(cfg.data["flow"]["T_end"])
        self.T_max = float(cfg.data["flow"]["T_max"])
        self.sample_times = cfg.sample_times()
        out = cfg.data["output"]
        self.dense = [tuple(w) for w in out["dense_windows"]]
        self.store_every = int(out["store_every"]) or None
        self.seed = seed
        self.ladder = build_ladder(cfg, self.bg, self.init, seed=seed)

    @property
    def eta(self):
        return hz.eta(self.grid.N, self.T_end / self.solver.K, float(self.cfg.data["flow"]["c1"]))

    def run_flows(self, ladder=None, bg=None, threads=None):
        return ladder_flow(bg or self.bg, ladder or self.ladder, self.T_end, self.solver, self.sample_times,
                           self.store_every, self.dense, threads=threads)


def build_ladder(cfg, bg, init, lad=None, seed=0):
    lad = lad or cfg.data["ladder"]
    mode = lad["mode"]
    J = int(lad["J"])
    if mode == "single":
        ladder = single_ladder(bg, init, eps=0.0)
    elif mode == "smooth":
        ladder = smooth_ladder(bg, init, J, eps0=float(lad["eps0"]), r0=float(lad["r0"]), seed=seed,
                               eps_ratio=float(lad.get("eps_ratio", 0.5)))
    else:
        target = build_potential(lad["target"], bg.grid, cfg, "ladder", "target")
        eps = [float(lad["eps0"]) * float(lad.get("eps_ratio", 0.5)) ** j for j in range(J + 1)]
        ladder = measure_ladder(bg, target, eps, r_scale=float(lad["r_scale"]), cfg=cfg.solver())
    if lad.get("strict"):
        ladder = strictify(ladder, shift=lad.get("strict_shift", "harmonic"))
    return ladder


# -- check dispatch ---------------------------------------------------------


def _result(name, status, report=None, message="", constant=None, rows=None):
    if report is not None:
        constant = report.constant if constant is None else constant
        rows = report.rows if rows is None else rows
    return dict(name=name, status=status, constant=float(constant) + 0.0 if constant is not None else math.nan,
                rows=rows or [], message=message, report=report)


def _status(ok):
    return "passed" if ok else "failed"


def run_check(sc, lf, chk, threads=None):
    kind = chk["kind"]
    name = chk.get("name", kind)
    trajs = lf.trajectories
    cfg = sc.cfg
    if kind == "upper_u":
        rep = hz.check_upper_u(trajs)
        return _result(name, _status(rep.passed), rep)
    if kind == "ut_upper":
        rep = hz.check_ut_upper(trajs)
        return _result(name, _status(rep.passed), rep)
    if kind == "ut_lower":
        rep = hz.check_ut_lower(trajs, float(chk.get("lambda1", 0.1)), float(chk.get("lambda2", 0.5)),
                                chk.get("delta"))
        return _result(name, _status(rep.passed), rep)
    if kind == "residual":
        return _residual_check(sc, lf, chk, name)
    if kind == "deg_upper":
        wt = cfg.weight(chk["weight"], sc.grid, sc.bg)
        rep = hz.check_deg_upper(trajs, wt, chk.get("A"), chk.get("C0_max"))
        ok = rep.passed
        lam_seq = chk.get("lambda_limit")
        if lam_seq:
            base = hz.check_deg_upper(trajs, wt.with_lambda(0.0), None)
            consts = [hz.check_deg_upper(trajs, wt.with_lambda(float(l)), None).constant for l in lam_seq]
            rel = abs(consts[-1] - base.constant) / max(abs(base.constant), 1e-12)
            rep.details.update(lambda_limit=list(lam_seq), lambda_constants=consts,
                               unweighted_constant=base.constant, lambda_limit_rel=rel)
            rep.rows.append(dict(check=f"{name}:lambda_limit", rung=-1, t=0.0, value=rel,
                                 margin=float(chk.get("lambda_tol", 0.05)) - rel,
                                 passed=rel <= float(chk.get("lambda_tol", 0.05))))
            ok = ok and rel <= float(chk.get("lambda_tol", 0.05))
        return _result(name, _status(ok), rep)
    if kind == "lower":
        rep = hz.check_lower_scenario(trajs, chk.get("A"), float(chk.get("margin_c", 0.5)),
                                      float(chk.get("c0_min", 0.5)))
        return _result(name, _status(rep.passed), rep)
    if kind == "weak_convergence":
        tests = [build_potential(t, sc.grid, cfg, "checks", "tests") for t in chk.get("tests", [{"kind": "constant", "value": 1.0}])]
        wt = cfg.weight(chk["weight"], sc.grid, sc.bg) if "weight" in chk else None
        powers = [int(p) for p in chk.get("powers", [1, sc.grid.n])]
        rep = hz.check_weak_convergence(lf.finest, tests, powers, wt, conv_tol=float(chk.get("conv_tol", 1e-2)),
                                        last=int(chk.get("last", 4)))
        return _result(name, _status(rep.passed), rep)
    if kind == "uniqueness":
        return _uniqueness_check(sc, lf, chk, name, threads)
    if kind == "volume":
        rep = hz.collapsed_volume_probe(trajs)
        ok = rep.passed
        for t_probe, expected in chk.get("expect_values", []):
            i = int(np.argmin(np.abs(rep.details["times"] - t_probe)))
            err = abs(rep.details["V_limit"][i] - expected)
            tol = float(chk.get("value_tol", 1e-6))
            rep.rows.append(dict(check=f"{name}:value", rung=-1, t=float(rep.details["times"][i]), value=err,
                                 margin=tol - err, passed=err <= tol))
            ok = ok and err <= tol
        return _result(name, _status(ok), rep)
    if kind == "comparison":
        tol = float(chk.get("tol", sc.eta))
        rep = hz.check_comparison(lf, tol)
        return _result(name, _status(rep.passed), rep)
    if kind == "shift":
        c = float(chk.get("c", 0.5))
        tol = float(chk.get("tol", 1e-10))
        bgf = trajs[-1].bg
        v = sc.ladder.entries[-1][1]
        a = lf.finest
        b = flow_run(bgf, v + c, sc.T_end, sc.solver, sc.sample_times, sc.store_every, sc.dense)
        r = hz.shift_residual(a, b, c)
        rows = [dict(check=name, rung=len(trajs) - 1, t=0.0, value=r, margin=tol - r, passed=r <= tol)]
        return _result(name, _status(r <= tol), constant=r, rows=rows)
    if kind == "gauge":
        tol = float(chk.get("tol", 1e-10))
        bgf = trajs[-1].bg
        v = sc.ladder.entries[-1][1]
        p = phi_flow_run(bgf, v, sc.T_end, sc.solver, sc.sample_times, sc.store_every, sc.dense)
        res = hz.gauge_residual(lf.finest, p, v)
        rows = [dict(check=name, rung=len(trajs) - 1, t=t, value=r, margin=tol - r, passed=r <= tol)
                for t, r in res]
        worst = max(r for _, r in res)
        return _result(name, _status(worst <= tol), constant=worst, rows=rows)
    if kind == "linf":
        out = hz.linf_methods(lf.finest, sc.solver, every=int(chk.get("every", 4)))
        rows = []
        for r in out:
            for m in ("method_I", "method_II"):
                rows.append(dict(check=f"{name}:{m}", rung=len(trajs) - 1, t=r["t"], value=r[m],
                                 margin=math.inf, passed=bool(np.isfinite(r[m]))))
        ok = all(r["passed"] for r in rows)
        return _result(name, _status(ok), constant=max(r["value"] for r in rows), rows=rows)
    if kind == "modulus":
        rows = []
        for s in lf.finest.states:
            for k, m in hz.oscillation_modulus(s.u).items():
                rows.append(dict(check=f"{name}:shift{k}", rung=len(trajs) - 1, t=s.t, value=m,
                                 margin=math.inf, passed=bool(np.isfinite(m))))
        return _result(name, _status(all(r["passed"] for r in rows)),
                       constant=max(r["value"] for r in rows), rows=rows)
    raise ValueError(f"unknown check kind {kind}")


def _residual_check(sc, lf, chk, name):
    tr = lf.finest
    which = chk.get("which", ["eq1", "eq2", "eq3", "delta_comb"])
    lambda1 = float(chk.get("lambda1", 0.0))
    window = tuple(chk["window"]) if "window" in chk else None
    delta = chk.get("delta")
    if "delta_comb" in which and delta is None:
        lam1 = lambda1 if lambda1 > 0 else float(chk.get("delta_lambda1", 0.1))
        delta = bgmod.choose_delta(tr.bg.with_eps(0.0), lam1, float(chk.get("lambda2", sc.T_end)))
    A = chk.get("A")
    if "eq3" in which and A is None:
        A = bgmod.choose_A_lower(tr.bg.with_eps(0.0), margin_c=float(chk.get("margin_c", 0.5))).A
    tol = float(chk.get("tol", 10.0 * sc.eta))
    rows, worst = [], 0.0
    for w in which:
        lam = lambda1 if w != "delta_comb" else (lambda1 if lambda1 > 0 else float(chk.get("delta_lambda1", 0.1)))
        r = hz.residual_transformed_eqs(tr, w, lambda1=lam, delta=delta, A=A, window=window)
        worst = max(worst, r.max_sup)
        rows += [dict(check=f"{name}:{w}", rung=len(lf.trajectories) - 1, t=float(t), value=float(s),
                      margin=tol - float(s), passed=bool(s <= tol)) for t, s in zip(r.times, r.sup)]
    return _result(name, _status(worst <= tol), constant=worst, rows=rows)


def _uniqueness_check(sc, lf, chk, name, threads):
    cfg = sc.cfg
    lad = dict(cfg.data["ladder"])
    for key in ("eps0", "eps_ratio", "J", "r0", "strict", "strict_shift"):
        if key in chk:
            lad[key] = chk[key]
    n = sc.grid.n
    A1 = chk.get("A1", cfg.data["background"]["A1"])
    A1 = np.asarray(A1, dtype=float)
    A1 = A1 * np.eye(n) if A1.ndim == 0 else A1.reshape(n, n)
    bg_b = bgmod.BackgroundFamily(sc.grid, sc.bg.A0, sc.bg.B_inf, A1=A1, psi=sc.bg.psi, psi1=sc.bg.psi1,
                                  h_inf=sc.bg.h_inf, Omega=sc.bg.Omega)
    ladder_b = build_ladder(cfg, bg_b, sc.init, lad, seed=sc.seed)
    lf_b = sc.run_flows(ladder_b, bg_b, threads)
    rep = hz.check_ladder_uniqueness(lf, lf_b, sc.bg, sc.ladder, bg_b, ladder_b)
    return _result(name, _status(rep.passed), rep)


# -- whole runs -------------------------------------------------------------


def evaluate_checks(sc, lf, checks, threads=None):
    results = []
    for chk in checks:
        name = chk.get("name", chk["kind"])
        expect = chk.get("expect", "pass")
        try:
            res = run_check(sc, lf, chk, threads)
            if expect == "hypothesis_fail":
                res["status"] = "failed"
                res["message"] = "expected the hypothesis to fail, but the check ran"
        except HYPOTHESIS_ERRORS as exc:
            if expect == "hypothesis_fail":
                res = _result(name, "passed", message=f"refused as expected: {exc}")
            else:
                res = _result(name, "hypothesis", message=str(exc))
            res["rows"] = [dict(check=name, rung=-1, t=0.0, value=math.nan, margin=math.nan,
                                passed=res["status"] == "passed")]
        results.append(res)
    return results


def exit_code(results):
    statuses = {r["status"] for r in results}
    if "failed" in statuses:
        return EXIT_BOUND
    if "hypothesis" in statuses:
        return EXIT_HYPOTHESIS
    return EXIT_OK


def run_scenario(cfg, threads=None, seed=0, out_dir=None, figures=False):
    """Run one scenario; returns ``(exit_code, summary, results)``."""
    try:
        sc = Scenario(cfg, seed=seed)
    except HYPOTHESIS_ERRORS as exc:
        summary = dict(scenario=cfg.name, exit_code=EXIT_HYPOTHESIS, error=str(exc), checks=[])
        if out_dir:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            dio.write_summary(out_dir, summary)
        return EXIT_HYPOTHESIS, summary, []
    T_win = bgmod.kahler_window(sc.bg, T_max=sc.T_max)
    if sc.T_end > T_win + 1e-12:
        raise cfg.error("flow", "T_end", f"T_end={sc.T_end:g} exceeds the Kahler window {T_win:.6g}")
    lf = sc.run_flows(threads=threads)
    results = evaluate_checks(sc, lf, cfg.data.get("checks", []), threads)
    code = exit_code(results)
    summary = dict(
        scenario=cfg.name, exit_code=code, kahler_window=T_win, eps=sc.ladder.eps,
        ladder_constants=sc.ladder.constants, ladder_margins=sc.ladder.margins,
        checks=[dict(name=r["name"], status=r["status"], constant=r["constant"], message=r["message"],
                     details=(r["report"].details if r["report"] is not None else {}))
                for r in results],
    )
    if out_dir:
        write_outputs(out_dir, sc, lf, results, summary, figures)
    return code, summary, results


def write_outputs(out_dir, sc, lf, results, summary, figures=False):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [r for res in results for r in res["rows"]]
    dio.write_reports_csv(out / "reports.csv", rows)
    dio.write_summary(out, summary)
    dio.write_ladder(out / "ladder", sc.ladder)
    save = bool(sc.cfg.data["output"]["save_fields"])
    for j, tr in enumerate(lf.trajectories):
        dio.write_trajectory(out / "trajectories" / f"rung_{j:02d}", tr, sc.cfg.text if j == 0 else "", fields=save)
    (out / "config.toml").write_text(sc.cfg.text)
    if figures:
        from .plotting import render_figures

        render_figures(out / "figures", results, lf)


def verify_scenario(cfg, out_dir, threads=None):
    """Checks only, against trajectories stored by an earlier run with ``save_fields``."""
    out = Path(out_dir)
    sc = Scenario(cfg)
    rung_dirs = sorted((out / "trajectories").glob("rung_*"))
    if not rung_dirs or not (rung_dirs[0] / "u_0000.dfld").exists():
        raise FileNotFoundError(f"{out}: no stored fields (run with output.save_fields = true)")
    trajs = [dio.read_trajectory(d, sc.bg, sc.grid.period) for d in rung_dirs]
    for j, tr in enumerate(trajs):
        tr.rung = j
    lf = assemble_ladder_flow(trajs)
    checks = [c for c in cfg.data.get("checks", []) if c["kind"] not in ("uniqueness", "shift", "gauge")]
    results = evaluate_checks(sc, lf, checks, threads)
    code = exit_code(results)
    dio.write_reports_csv(out / "reports_verify.csv", [r for res in results for r in res["rows"]])
    return code, results

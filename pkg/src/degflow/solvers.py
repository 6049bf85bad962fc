"""Elliptic and parabolic complex Monge-Ampere solvers.

The parabolic integrator advances

    du/dt = log( (omega_t + i dd-bar u)^n / Omega ) - u

with a backward Euler step taken on ``e^t u`` (the linear decay is integrated
exactly). Per step it solves

    u+ - dt * log(det(omega_{t+} + i dd-bar u+) / Omega) = e^{-dt} u

by Newton's method. The scheme is first order and monotone, and it commutes
exactly with ``u -> u + c e^{-t}``, which is what makes the shift and gauge
identities hold to solver tolerance.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from . import background as bgmod
from .errors import FlowFailureError, InvalidRHSError, SolveFailureError
from .fields import (
    HermitianField,
    ScalarField,
    complex_hessian,
    TraceOperator,
    apply_symbol,
    constant_trace_symbol,
    integrate,
    inverse,
    ma_density,
    mean,
    min_eig,
)
from .krylov import gmres
from .parallel import ordered_map

logger = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    K: int = 256
    gamma: float = 2.0
    dt_min: float = 1e-12
    dt_max: float = math.inf
    newton_tol: float = 1e-13
    elliptic_tol: float = 1e-11
    newton_max_iter: int = 30
    pos_margin: float = 1e-12
    linear_tol: float = 1e-10
    linear_restart: int = 30
    linear_maxiter: int = 300
    max_damping: int = 20

    def __post_init__(self):
        if not self.dt_min > 0:
            raise ValueError("dt_min must be positive")
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.K < 1:
            raise ValueError("K must be >= 1")


# -- elliptic ---------------------------------------------------------------


def _precond_symbol(g, shift):
    Gbar = np.mean(g.values.reshape(-1, g.grid.n, g.grid.n), axis=0)
    Pinv = np.linalg.inv(Gbar)
    return shift - constant_trace_symbol(g.grid, 0.5 * (Pinv + Pinv.conj().T))


def elliptic_solve(bg_form, f, cfg=None, w0=None, compat_tol=1e-8):
    """Solve ``(bg_form + i dd-bar w)^n = f`` with ``integrate(w) = 0``.

    ``f`` must carry the same total mass as ``bg_form``; it is rescaled to
    exact compatibility before iterating. Returns ``(w, iterations)``.
    """
    cfg = cfg or SolverConfig()
    grid = bg_form.grid
    if not f.min() > 0:
        raise InvalidRHSError("right-hand side must be strictly positive")
    mass_form = integrate(ma_density(bg_form))
    mass_f = integrate(f)
    if abs(mass_f - mass_form) > compat_tol * abs(mass_form):
        raise InvalidRHSError(
            f"incompatible right-hand side: integral {mass_f:.12g} vs form mass {mass_form:.12g}"
        )
    log_f = np.log(f.values * (mass_form / mass_f))
    w = np.zeros(grid.shape) if w0 is None else w0.values - mean(w0)

    def residual(wv):
        g = bg_form + complex_hessian(ScalarField(grid, wv))
        if not min_eig(g).min() > cfg.pos_margin:
            return g, None
        return g, np.log(ma_density(g).values) - log_f

    g, F = residual(w)
    if F is None:
        raise SolveFailureError("initial guess is not admissible (form not positive)")
    for it in range(cfg.newton_max_iter + 1):
        rnorm = float(np.abs(F).max())
        if rnorm <= cfg.elliptic_tol:
            w = w - mean(ScalarField(grid, w))
            return ScalarField(grid, w), it
        if it == cfg.newton_max_iter:
            break
        ginv = inverse(g)
        detg = ma_density(g).values
        dc = float(np.sum(detg * F) / np.sum(detg))
        rhs = -F + dc
        sym = _precond_symbol(g, 0.0)
        sym_inv = np.zeros_like(sym)
        nz = sym != 0
        sym_inv[nz] = 1.0 / sym[nz]

        matvec = TraceOperator(ginv)

        def precond(r):
            return apply_symbol(r, sym_inv, grid)

        delta, lin_its, rel = gmres(matvec, rhs, precond, tol=cfg.linear_tol,
                              restart=cfg.linear_restart, maxiter=cfg.linear_maxiter,
                              atol=0.01 * cfg.elliptic_tol)
        if rel > 0.5 and lin_its > 0:
            raise SolveFailureError(
                f"linear solve stagnated at Newton residual {rnorm:.3e} (rounding floor?)"
            )
        delta -= np.sum(delta) / delta.size
        theta = 1.0
        for _ in range(cfg.max_damping + 1):
            g_new, F_new = residual(w + theta * delta)
            if F_new is not None:
                break
            theta *= 0.5
        else:
            raise SolveFailureError("positivity lost in Newton update (damping exhausted)")
        w = w + theta * delta
        g, F = g_new, F_new
    raise SolveFailureError(f"Newton did not converge (residual {float(np.abs(F).max()):.3e})")


# -- parabolic --------------------------------------------------------------


class FlowState:
    """One time sample of a flow: potential, its time derivative and the evolved metric."""

    __slots__ = ("t", "u", "u_t", "gtilde")

    def __init__(self, t, u, u_t, gtilde):
        self.t = float(t)
        self.u = u
        self.u_t = u_t
        self.gtilde = gtilde

    @classmethod
    def from_potential(cls, t, u, form, log_omega):
        g = form + complex_hessian(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            ut = np.log(ma_density(g).values) - log_omega - u.values
        return cls(t, u, ScalarField(u.grid, ut), g)

    def consistency_defect(self, log_omega):
        with np.errstate(divide="ignore", invalid="ignore"):
            ref = np.log(ma_density(self.gtilde).values) - log_omega - self.u.values
        return float(np.abs(self.u_t.values - ref).max())


@dataclass
class FlowTrajectory:
    states: List[FlowState]
    initial: FlowState
    diagnostics: List[dict] = field(default_factory=list)
    eps: float = 0.0
    rung: Optional[int] = None
    gauge: str = "u"
    bg: object = None
    dt_max_used: float = 0.0

    @property
    def times(self):
        return np.array([s.t for s in self.states])

    def state_at(self, t, tol=1e-12):
        for s in self.states:
            if abs(s.t - t) <= tol * max(1.0, abs(t)):
                return s
        raise KeyError(f"no stored state at t={t}")

    def index_of(self, t, tol=1e-12):
        for i, s in enumerate(self.states):
            if abs(s.t - t) <= tol * max(1.0, abs(t)):
                return i
        raise KeyError(f"no stored state at t={t}")


def time_nodes(T_end, K, gamma, sample_times=()):
    """Graded nodes ``T (k/K)^gamma`` merged with requested sample times."""
    base = T_end * (np.arange(K + 1) / K) ** gamma
    extra = [float(t) for t in sample_times if 0 < t <= T_end]
    nodes = np.union1d(base, extra)
    keep = [nodes[0]]
    for t in nodes[1:]:
        if t - keep[-1] > 1e-14 * max(1.0, t):
            keep.append(t)
        elif t in extra:
            keep[-1] = t
    keep[-1] = T_end
    return np.array(keep), base


class _Stepper:
    """Newton solve of one backward-Euler step for a given form at the new time."""

    def __init__(self, cfg, log_omega, grid):
        self.cfg = cfg
        self.log_omega = log_omega
        self.grid = grid

    def residual(self, form, u, rhs, dt):
        g = form + complex_hessian(ScalarField(self.grid, u))
        lam = min_eig(g).min()
        if not lam > self.cfg.pos_margin:
            return g, None, lam
        L = np.log(ma_density(g).values) - self.log_omega
        return g, u - dt * L - rhs, lam

    def solve(self, form, u_prev, dt):
        cfg = self.cfg
        grid = self.grid
        rhs = math.exp(-dt) * u_prev
        u = u_prev.copy()
        g, R, lam = self.residual(form, u, rhs, dt)
        if R is None:
            u = rhs.copy()
            g, R, lam = self.residual(form, u, rhs, dt)
            if R is None:
                return None
        lin_total = 0
        scale = max(1.0, float(np.abs(u).max()))
        for it in range(cfg.newton_max_iter + 1):
            rnorm = float(np.abs(R).max())
            if rnorm <= cfg.newton_tol * scale:
                return u, g, lam, it, lin_total, rnorm
            if it == cfg.newton_max_iter:
                return None
            ginv = inverse(g)
            sym_inv = 1.0 / (_precond_symbol(g, 1.0 / dt) * dt)
            trace = TraceOperator(ginv)

            def matvec(d):
                return d - dt * trace(d)

            def precond(r):
                return apply_symbol(r, sym_inv, grid)

            delta, nlin, _ = gmres(matvec, -R, precond, tol=cfg.linear_tol,
                                   restart=cfg.linear_restart, maxiter=cfg.linear_maxiter,
                                   atol=0.01 * cfg.newton_tol * scale)
            lin_total += nlin
            theta = 1.0
            for _ in range(cfg.max_damping + 1):
                g_new, R_new, lam_new = self.residual(form, u + theta * delta, rhs, dt)
                if R_new is not None:
                    break
                theta *= 0.5
            else:
                return None
            u = u + theta * delta
            g, R, lam = g_new, R_new, lam_new
        return None


def integrate_flow(form_at, u0, log_omega, T_end, cfg, sample_times=(), store_every=None,
                   dense_windows=(), initial_form=None):
    """Generic driver: ``form_at(t)`` gives the background at time ``t``."""
    grid = u0.grid
    nodes, base = time_nodes(T_end, cfg.K, cfg.gamma, sample_times)
    samples = {float(t) for t in sample_times if 0 < t <= T_end}
    stride = store_every or max(1, cfg.K // 32)
    stored_base = {float(base[k]) for k in range(1, cfg.K + 1) if k % stride == 0 or k == 1}
    stored_base.add(float(T_end))

    def wanted(t):
        if t in samples or t in stored_base:
            return True
        return any(a <= t <= b for a, b in dense_windows)

    stepper = _Stepper(cfg, log_omega, grid)
    init_form = initial_form if initial_form is not None else form_at(0.0)
    initial = FlowState.from_potential(0.0, u0, init_form, log_omega)
    states = []
    diags = []
    u = u0.values.copy()
    t = 0.0
    dt_used = 0.0
    last_state = initial
    for t_next in nodes[1:]:
        pending = [(t, t_next)]
        while pending:
            a, b = pending.pop(0)
            dt = b - a
            if dt > cfg.dt_max:
                mid = a + 0.5 * dt
                pending[:0] = [(a, mid), (mid, b)]
                continue
            out = stepper.solve(form_at(b), u, dt)
            if out is None:
                if dt / 2 < cfg.dt_min:
                    raise FlowFailureError(
                        f"step underflow at t={a:.6g} (dt={dt:.3e})", last_state=last_state
                    )
                mid = a + 0.5 * dt
                pending[:0] = [(a, mid), (mid, b)]
                continue
            u, g, lam, its, lin, rnorm = out
            dt_used = max(dt_used, dt)
            diags.append(dict(t=b, dt=dt, newton=its, linear=lin, min_eig=lam, residual=rnorm))
        t = t_next
        if wanted(float(t_next)):
            us = ScalarField(grid, u.copy())
            with np.errstate(divide="ignore"):
                ut = np.log(ma_density(g).values) - log_omega - u
            last_state = FlowState(t_next, us, ScalarField(grid, ut), g)
            states.append(last_state)
    return FlowTrajectory(states=states, initial=initial, diagnostics=diags, dt_max_used=dt_used)


def flow_run(bg, v0, T_end, cfg=None, sample_times=(), store_every=None, dense_windows=(),
             check_window=True, T_max=None):
    """Flow from ``u(0) = v0`` over the family ``omega_t(eps)`` of ``bg``."""
    cfg = cfg or SolverConfig()
    if check_window:
        T = bgmod.kahler_window(bg, T_max=max(T_end, T_max or T_end))
        if T_end > T + 1e-12:
            raise ValueError(f"T_end={T_end:g} exceeds the Kahler window {T:.6g}")
    log_omega = np.log(bg.Omega.values)
    traj = integrate_flow(lambda t: bgmod.omega_t(bg, t), v0, log_omega, T_end, cfg,
                          sample_times, store_every, dense_windows)
    traj.eps = bg.eps
    traj.bg = bg
    return traj


def phi_flow_run(bg, v, T_end, cfg=None, sample_times=(), store_every=None, dense_windows=()):
    """The same flow in the gauge with background ``hat omega_t`` and ``phi(0) = 0``."""
    cfg = cfg or SolverConfig()
    log_omega = np.log(bg.Omega.values)
    om0 = bgmod.hat_omega_t(bg, v, 0.0)
    diff = om0.values - bg.omega_inf.values

    def form_at(t):
        return HermitianField(bg.grid, bg.omega_inf.values + math.exp(-t) * diff)

    zero = ScalarField.constant(v.grid, 0.0)
    traj = integrate_flow(form_at, zero, log_omega, T_end, cfg, sample_times, store_every,
                          dense_windows)
    traj.eps = bg.eps
    traj.bg = bg
    traj.gauge = "phi"
    return traj


def gauge_transform(traj, v, direction="to_phi"):
    """Convert between ``u`` and ``phi = u - e^{-t} v`` (time derivative ``u_t + e^{-t} v``)."""
    if direction not in ("to_phi", "to_u"):
        raise ValueError("direction must be 'to_phi' or 'to_u'")
    sign = -1.0 if direction == "to_phi" else 1.0

    def convert(s):
        decay = math.exp(-s.t)
        return FlowState(s.t, s.u + sign * decay * v, s.u_t - sign * decay * v, s.gtilde)

    out = replace(traj, states=[convert(s) for s in traj.states], initial=convert(traj.initial))
    out.gauge = "phi" if direction == "to_phi" else "u"
    return out


@dataclass
class LadderFlow:
    trajectories: List[FlowTrajectory]
    times: np.ndarray
    weak: List[ScalarField]
    gaps: np.ndarray
    eps: List[float]

    @property
    def finest(self):
        return self.trajectories[-1]


def ladder_flow(bg, ladder, T_end, cfg=None, sample_times=(), store_every=None,
                dense_windows=(), threads=None):
    """Independent flows for every rung, plus the pointwise-infimum weak flow."""
    cfg = cfg or SolverConfig()
    entries = list(ladder.entries)

    def run(item):
        j, (eps, v) = item
        try:
            traj = flow_run(bg.with_eps(eps), v, T_end, cfg, sample_times, store_every,
                            dense_windows)
        except FlowFailureError as exc:
            exc.rung = j
            raise
        traj.rung = j
        return traj

    trajs = ordered_map(run, list(enumerate(entries)), threads)
    return assemble_ladder_flow(trajs)


def assemble_ladder_flow(trajs):
    times = trajs[0].times
    for tr in trajs[1:]:
        if len(tr.times) != len(times) or np.abs(tr.times - times).max() > 1e-12:
            raise ValueError("rungs were sampled at different times")
    weak = []
    gaps = np.zeros((len(times), max(0, len(trajs) - 1)))
    for i in range(len(times)):
        stack = np.stack([tr.states[i].u.values for tr in trajs])
        weak.append(ScalarField(trajs[0].states[i].u.grid, stack.min(axis=0)))
        for j in range(len(trajs) - 1):
            gaps[i, j] = float(np.abs(stack[j] - stack[j + 1]).max())
    return LadderFlow(trajs, times, weak, gaps, [tr.eps for tr in trajs])

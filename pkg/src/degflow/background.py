"""Static geometric data of a flow and the cone constants derived from it.

Forms are modelled on the flat periodic stage as ``constant matrix + i dd-bar
(potential)``. A singular constant part of the initial form stands in for a
class on the boundary of the Kahler cone.
"""

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import NamedTuple, Optional

import numpy as np

from .errors import (
    InvalidFieldError,
    InvalidInitialDataError,
    NoDeltaError,
    NotAdmissibleError,
    NotApplicableError,
    WindowEmptyError,
)
from .fields import GridSpec, HermitianField, ScalarField, complex_hessian, min_eig, rel_min_eig

POS_MARGIN = 1e-6
M_CLAMP = 30.0
MASK_THRESHOLD = 10.0


def _matrix(grid, A, name):
    m = np.asarray(A, dtype=complex)
    if m.ndim == 0:
        m = m * np.eye(grid.n)
    m = m.reshape(grid.n, grid.n)
    if not np.allclose(m, m.conj().T, atol=1e-14, rtol=0):
        raise InvalidFieldError(f"{name} is not Hermitian")
    return m


@dataclass(frozen=True, eq=False)
class BackgroundFamily:
    grid: GridSpec
    A0: np.ndarray
    B_inf: np.ndarray
    A1: Optional[np.ndarray] = None
    psi: Optional[ScalarField] = None
    psi1: Optional[ScalarField] = None
    h_inf: Optional[ScalarField] = None
    Omega: Optional[ScalarField] = None
    eps: float = 0.0

    def __post_init__(self):
        g = self.grid
        set_ = object.__setattr__
        set_(self, "A0", _matrix(g, self.A0, "A0"))
        set_(self, "B_inf", _matrix(g, self.B_inf, "B_inf"))
        set_(self, "A1", _matrix(g, np.eye(g.n) if self.A1 is None else self.A1, "A1"))
        zero = ScalarField.constant(g, 0.0)
        for name in ("psi", "psi1", "h_inf"):
            if getattr(self, name) is None:
                set_(self, name, zero)
        if self.Omega is None:
            set_(self, "Omega", ScalarField.constant(g, 1.0))
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if not self.Omega.min() > 0:
            raise InvalidFieldError("volume density Omega must be strictly positive")
        self.omega1.check_positive(0.0, what="omega_1")

    def with_eps(self, eps):
        return replace(self, eps=float(eps))

    @cached_property
    def omega(self):
        """The (possibly degenerate) initial form, without perturbation."""
        return HermitianField.constant(self.grid, self.A0) + complex_hessian(self.psi)

    @cached_property
    def omega1(self):
        return HermitianField.constant(self.grid, self.A1) + complex_hessian(self.psi1)

    @cached_property
    def omega_inf(self):
        return HermitianField.constant(self.grid, self.B_inf) + complex_hessian(self.h_inf)

    @cached_property
    def omega_eps(self):
        if self.eps == 0:
            return self.omega
        return self.omega + self.eps * self.omega1

    @property
    def n(self):
        return self.grid.n


def omega_t(bg, t):
    """``omega_inf + e^{-t} (omega(eps) - omega_inf)``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return bg.omega_eps
    s = np.exp(-t)
    return HermitianField(bg.grid, bg.omega_inf.values + s * (bg.omega_eps.values - bg.omega_inf.values))


def initial_form(bg, v):
    """``omega(eps) + i dd-bar v``."""
    return bg.omega_eps + complex_hessian(v)


def hat_omega_t(bg, v, t, tol=1e-8):
    """Background absorbing the initial potential: ``omega_inf + e^{-t}(omega + i dd-bar v - omega_inf)``."""
    om0 = initial_form(bg, v)
    lam = min_eig(om0).min()
    if lam < -tol:
        raise InvalidInitialDataError(f"omega + i dd-bar v has eigenvalue {lam:.3e} < -{tol:g}")
    if t == 0:
        return om0
    s = np.exp(-t)
    return HermitianField(bg.grid, bg.omega_inf.values + s * (om0.values - bg.omega_inf.values))


def _window_margin(bg, t):
    return min_eig(omega_t(bg, t)).min()


def kahler_window(bg, T_max=2.0, n_samples=64, pos_margin=POS_MARGIN, t_probe_min=1e-3):
    """Largest ``T <= T_max`` with ``omega_t`` positive (margin ``pos_margin``) on ``(0, T]``.

    The minimal eigenvalue of ``omega_t`` is concave in ``e^{-t}``, so the
    positive set is an interval; sampling finds the first failure and a
    bisection refines it.
    """
    if not _window_margin(bg, t_probe_min) > pos_margin:
        raise WindowEmptyError(
            f"omega_t is not positive even at t={t_probe_min:g} "
            f"(min eigenvalue {_window_margin(bg, t_probe_min):.3e})"
        )
    ts = t_probe_min + (T_max - t_probe_min) * np.arange(1, n_samples + 1) / n_samples
    good = t_probe_min
    for t in ts:
        if _window_margin(bg, t) > pos_margin:
            good = t
            continue
        lo, hi = good, t
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if _window_margin(bg, mid) > pos_margin:
                lo = mid
            else:
                hi = mid
        return lo
    return float(T_max)


def _delta_form_margin(om, D, delta, ts):
    worst = np.inf
    worst_t = None
    for t in ts:
        c = 1.0 - np.exp(-t)
        lam = min_eig(HermitianField(om.grid, delta * om.values - c * D.values)).min()
        if lam < worst:
            worst, worst_t = lam, t
    return worst, worst_t


def delta_form(bg, lambda1, delta, s):
    """``delta omega_{lambda1} - (1 - e^{-s})(omega_{lambda1} - omega_inf)``."""
    om = omega_t(bg, lambda1)
    D = om - bg.omega_inf
    return HermitianField(bg.grid, delta * om.values - (1.0 - np.exp(-s)) * D.values)


def choose_delta(bg, lambda1, lambda2, n_samples=64, pos_margin=POS_MARGIN):
    """Pick ``delta`` in (0, 1) making the delta-form positive on ``[0, lambda2 - lambda1]``.

    Returns the midpoint of the feasible interval ``(delta_min, 1)``.
    """
    if not 0 < lambda1 < lambda2:
        raise ValueError("need 0 < lambda1 < lambda2")
    om = omega_t(bg, lambda1)
    D = om - bg.omega_inf
    ts = np.linspace(0.0, lambda2 - lambda1, n_samples)
    top, t_top = _delta_form_margin(om, D, 1.0, ts)
    if not top > pos_margin:
        raise NoDeltaError(
            f"no delta < 1 works: margin {top:.3e} at s={t_top:.4g}", worst_t=t_top, worst_eig=top
        )
    lo, hi = 0.0, 1.0
    for _ in range(45):
        mid = 0.5 * (lo + hi)
        if _delta_form_margin(om, D, mid, ts)[0] > pos_margin:
            hi = mid
        else:
            lo = mid
    return 0.5 * (hi + 1.0)


@dataclass(frozen=True, eq=False)
class WeightData:
    """Model of ``log|sigma|^2``: log-singular at the lattice points of one complex axis."""

    w: ScalarField
    hess: HermitianField
    mask: np.ndarray = field(repr=False)
    mask_threshold: float
    lam: float
    axis: int
    c_w: float
    clamp: float = M_CLAMP

    @property
    def masked_fraction(self):
        return float(self.mask.mean())

    def with_lambda(self, lam):
        return replace(self, lam=float(lam))

    def with_threshold(self, M):
        return replace(self, mask_threshold=float(M), mask=self.w.values <= -M)


def raw_weight(grid, axis):
    """``log(sin^2(pi x) + sin^2(pi y))`` on complex axis ``axis`` (1-based), unclamped."""
    x = grid.x(axis - 1) / grid.period
    y = grid.y(axis - 1) / grid.period
    s = np.sin(np.pi * x) ** 2 + np.sin(np.pi * y) ** 2
    with np.errstate(divide="ignore"):
        return np.broadcast_to(np.log(s), grid.shape)


def _weight_hessian(grid, axis):
    x = grid.x(axis - 1) / grid.period
    y = grid.y(axis - 1) / grid.period
    p2 = (np.pi / grid.period) ** 2
    s = np.sin(np.pi * x) ** 2 + np.sin(np.pi * y) ** 2
    lap_s = 2 * p2 * (np.cos(2 * np.pi * x) + np.cos(2 * np.pi * y))
    grad2 = p2 * (np.sin(2 * np.pi * x) ** 2 + np.sin(2 * np.pi * y) ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = 0.25 * (lap_s / s - grad2 / s**2)
    h = np.where(s > 0, h, 0.0)
    vals = np.zeros(grid.shape + (grid.n, grid.n), dtype=complex)
    vals[..., axis - 1, axis - 1] = np.broadcast_to(h, grid.shape)
    return HermitianField(grid, vals)


def builtin_weight(grid, axis, lam=0.0, M=MASK_THRESHOLD, clamp=M_CLAMP, omega1=None):
    """Periodic log-singular weight with its exact complex Hessian.

    The Hessian is evaluated from the closed form (away from the zero set)
    rather than spectrally, since the clamped weight is not resolved by any
    grid. ``c_w`` is the smallest ``c`` with ``i dd-bar w >= -c omega_1`` on
    unmasked points.
    """
    if not 1 <= axis <= grid.n:
        raise ValueError(f"weight axis must be in 1..{grid.n}")
    raw = raw_weight(grid, axis)
    w = np.maximum(raw - raw[np.isfinite(raw)].max(), -clamp)
    w = ScalarField(grid, w)
    hess = _weight_hessian(grid, axis)
    mask = w.values <= -M
    ref = HermitianField.identity(grid) if omega1 is None else omega1
    rel = rel_min_eig(hess, ref).values
    c_w = float(max(0.0, -rel[~mask].min()))
    return WeightData(w=w, hess=hess, mask=mask, mask_threshold=float(M), lam=float(lam),
                      axis=axis, c_w=c_w, clamp=float(clamp))


def weighted_form(bg, wt, A):
    """``omega(eps) + lambda i dd-bar w - (1 - A) omega_inf``."""
    return HermitianField(
        bg.grid, bg.omega_eps.values + wt.lam * wt.hess.values - (1.0 - A) * bg.omega_inf.values
    )


class AdmissibleA(NamedTuple):
    A: float
    ratio: float
    margin: float


def _weighted_margin(bg, wt, A):
    lam = min_eig(weighted_form(bg, wt, A)).values
    return float(lam[~wt.mask].min())


def admissible_lambda_A(bg, wt, pos_margin=POS_MARGIN, n_grid=64):
    """Smallest ``A`` in (0, 1) keeping the weighted form nonnegative off the mask."""
    grid_A = np.arange(1, n_grid) / n_grid
    prev = 0.0
    for A in grid_A:
        if _weighted_margin(bg, wt, A) >= pos_margin:
            lo, hi = prev, A
            for _ in range(50):
                mid = 0.5 * (lo + hi)
                if _weighted_margin(bg, wt, mid) >= pos_margin:
                    hi = mid
                else:
                    lo = mid
            return AdmissibleA(hi, wt.lam / (1.0 - hi), _weighted_margin(bg, wt, hi))
        prev = A
    # the last candidate below 1
    A = 1.0 - 1e-9
    if _weighted_margin(bg, wt, A) >= pos_margin:
        return AdmissibleA(A, wt.lam / (1.0 - A), _weighted_margin(bg, wt, A))
    raise NotAdmissibleError(
        f"weighted form not nonnegative for any A < 1 (lambda={wt.lam:g}); "
        f"margin at A->1 is {_weighted_margin(bg, wt, A):.3e}"
    )


class LowerA(NamedTuple):
    A: float
    t_window: float
    A_min: float


def lower_form(bg, A):
    """``omega(eps) - (1 - A) omega_inf``."""
    return HermitianField(bg.grid, bg.omega_eps.values + (A - 1.0) * bg.omega_inf.values)


def choose_A_lower(bg, margin_c=0.5, A_floor=2.0, pos_margin=POS_MARGIN):
    """Constant ``A > 1`` with ``omega + (A - 1) omega_inf > 0`` and the window ``e^t <= A - margin_c``.

    ``A_min`` is the smallest feasible value; the returned ``A`` is raised to
    ``A_floor`` when given so that the window is nonempty.
    """
    lam_inf = min_eig(bg.omega_inf).min()
    if not lam_inf > 0:
        raise NotApplicableError(f"omega_inf is not positive (min eigenvalue {lam_inf:.3e})")

    def margin(a1):
        return min_eig(lower_form(bg, 1.0 + a1)).min()

    lo, hi = 0.0, 1.0
    if margin(0.0) > pos_margin:
        hi = 0.0
    else:
        while not margin(hi) > pos_margin:
            lo, hi = hi, 2 * hi
            if hi > 1e12:
                raise NotApplicableError("no A > 1 makes omega + (A-1) omega_inf positive")
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if margin(mid) > pos_margin:
                hi = mid
            else:
                lo = mid
    A_min = 1.0 + hi
    A = A_min if A_floor is None else max(A_min, A_floor)
    if not 0 < margin_c < A - 1:
        raise NotApplicableError(f"margin_c={margin_c:g} must lie in (0, A-1) with A={A:.6g}")
    return LowerA(A, float(np.log(A - margin_c)), A_min)

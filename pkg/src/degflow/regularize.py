"""Admissible initial data and decreasing approximation ladders."""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Tuple

import numpy as np

from .errors import InvalidInitialDataError, InvalidMeasureError, LadderFailureError
from .fields import HermitianField, ScalarField, apply_symbol, complex_hessian, integrate, ma_density, min_eig


# -- mollifier --------------------------------------------------------------


@lru_cache(maxsize=64)
def _axis_multiplier(N, period, r):
    """DFT of a periodised, sampled, mass-one Gaussian of width ``r`` on one axis."""
    if r <= 0:
        return np.ones(N)
    x = np.arange(N) * (period / N)
    d = np.minimum(x, period - x)
    images = int(np.ceil(6 * r / period)) + 1
    k = np.zeros(N)
    for m in range(-images, images + 1):
        k += np.exp(-0.5 * ((d + m * period) / r) ** 2)
    k /= np.sum(k)
    mult = np.fft.fft(k).real
    # the exact transform is a theta function (positive); remove rounding
    return np.clip(mult, 0.0, 1.0)


def kernel_multiplier(grid, r, half=True):
    """Fourier multiplier of the mollifier at radius ``r`` (all entries in [0, 1]).

    ``half`` selects the ``rfftn`` layout (last axis truncated to ``N/2 + 1``).
    """
    m1 = _axis_multiplier(grid.N, float(grid.period), float(r))
    out = np.ones(())
    for axis in range(grid.ndim):
        m = m1[: grid.N // 2 + 1] if (half and axis == grid.ndim - 1) else m1
        shape = [1] * grid.ndim
        shape[axis] = m.shape[0]
        out = out * m.reshape(shape)
    return out


def attenuation(grid, r, mode=1):
    """Factor applied by the mollifier to a single Fourier mode along one axis."""
    return float(_axis_multiplier(grid.N, float(grid.period), float(r))[mode])


def mollify(f, r):
    """Periodic convolution with the mass-one Gaussian kernel of radius ``r``.

    The result is clipped to ``[min f, max f]``, which the exact convolution
    satisfies; the clip only removes rounding.
    """
    if r <= 0:
        return f.copy()
    out = apply_symbol(f.values, kernel_multiplier(f.grid, r), f.grid)
    return ScalarField(f.grid, np.clip(out, f.values.min(), f.values.max()))


def jittered_radius(r, seed=0, j=0):
    """Radius perturbed by at most 1% from a seeded stream (identity for seed 0)."""
    if not seed:
        return r
    rng = np.random.default_rng([int(seed), int(j)])
    return r * (1.0 + 0.01 * rng.uniform(-1.0, 1.0))


# -- initial data -----------------------------------------------------------


@dataclass
class InitialData:
    """A bounded potential ``v`` plus optional facts about ``(omega + i dd-bar v)^n``.

    ``measure_tags`` may hold ``upper_bound``, ``lower_bound`` and ``p_norm``
    (a ``(p, bound)`` pair). ``smooth`` selects how positivity is checked:
    directly, or after a small probe mollification for kinked potentials.
    """

    v: ScalarField
    measure_tags: dict = field(default_factory=dict)
    smooth: bool = True

    def __post_init__(self):
        if not self.v.is_finite():
            raise InvalidInitialDataError("initial potential must be bounded (finite everywhere)")

    def psh_margin(self, bg, probe_radius=None):
        """Smallest eigenvalue of ``omega + i dd-bar v`` as seen on the grid."""
        pot = bg.psi + self.v
        if not self.smooth:
            r = probe_radius if probe_radius is not None else 4 * bg.grid.spacing
            pot = mollify(pot, r)
        form = HermitianField.constant(bg.grid, bg.A0) + complex_hessian(pot)
        return min_eig(form).min()

    def validate(self, bg, psh_tol=1e-8, probe_radius=None):
        lam = self.psh_margin(bg, probe_radius)
        if lam < -psh_tol:
            raise InvalidInitialDataError(
                f"omega + i dd-bar v is not nonnegative: min eigenvalue {lam:.3e} < -{psh_tol:g}"
            )
        return lam


# -- ladders ----------------------------------------------------------------


@dataclass
class ApproxLadder:
    entries: List[Tuple[float, ScalarField]]
    strict: bool = False
    constants: List[float] = field(default_factory=list)
    margins: List[float] = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def J(self):
        return len(self.entries) - 1

    @property
    def eps(self):
        return [e for e, _ in self.entries]

    @property
    def potentials(self):
        return [v for _, v in self.entries]

    def __len__(self):
        return len(self.entries)

    def monotonicity_defect(self):
        """``max_j max_grid (v_{j+1} - v_j)``; nonpositive for a valid ladder."""
        pots = self.potentials
        if len(pots) < 2:
            return -np.inf
        return max(float((b.values - a.values).max()) for a, b in zip(pots, pots[1:]))

    def check(self, tol=1e-12):
        eps = self.eps
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise LadderFailureError("eps values must be strictly decreasing", rung=None)
        if self.monotonicity_defect() > tol:
            raise LadderFailureError("ladder is not pointwise non-increasing", rung=None)


def _form_margin(bg, eps, vj):
    return min_eig(bg.with_eps(eps).omega_eps + complex_hessian(vj)).min()


def _backward_constants(pots, floor):
    """Minimal constants making ``pots[j] + c_j`` non-increasing and ``>= floor`` at the end."""
    J = len(pots) - 1
    c = [0.0] * (J + 1)
    c[J] = max(0.0, float((floor.values - pots[J].values).max())) if floor is not None else 0.0
    for j in range(J - 1, -1, -1):
        c[j] = c[j + 1] + max(0.0, float((pots[j + 1].values - pots[j].values).max()))
        if floor is not None:
            c[j] = max(c[j], float((floor.values - pots[j].values).max()))
    return c


def smooth_ladder(bg, init, J, eps0=1.0, r0=0.05, margin=1e-8, seed=0, r_min=None, eps_ratio=0.5):
    """Mollify-and-shift ladder ``v_j = mollify(v, r_j) + c_j`` with ``eps_j = eps0 eps_ratio^j``.

    ``r_j = max(r0 2^-j, r_min)``; the floor (default two grid spacings) keeps
    kinked data resolved. Constants are the smallest ones giving
    ``v_0 >= v_1 >= ... >= v_J >= v`` pointwise.
    """
    if J < 0:
        raise ValueError("J must be >= 0")
    if eps0 <= 0:
        raise ValueError("eps0 must be positive")
    v = init.v
    if not 0 < eps_ratio < 1:
        raise ValueError("eps_ratio must lie in (0, 1)")
    eps = [eps0 * eps_ratio ** j for j in range(J + 1)]
    if r_min is None:
        r_min = 2 * bg.grid.spacing if not init.smooth else 0.0
    radii = [jittered_radius(max(r0 * 2.0 ** (-j), r_min), seed, j) for j in range(J + 1)]
    moll = [mollify(v, r) for r in radii]
    consts = _backward_constants(moll, v)
    entries = []
    margins = []
    for j in range(J + 1):
        vj = moll[j] + consts[j]
        lam = _form_margin(bg, eps[j], vj)
        if not lam > margin:
            raise LadderFailureError(
                f"rung {j}: omega(eps_j) + i dd-bar v_j has margin {lam:.3e} "
                f"(eps_j={eps[j]:.3g} too small for smoothing radius {radii[j]:.3g})",
                rung=j,
            )
        entries.append((eps[j], vj))
        margins.append(lam)
    return ApproxLadder(entries, strict=False, constants=consts, margins=margins,
                        info={"mode": "smooth", "radii": radii})


def single_ladder(bg, init, eps=0.0, margin=1e-8):
    """A one-rung ladder for scenarios whose initial form is already positive."""
    lam = _form_margin(bg, eps, init.v)
    if not lam > margin:
        raise LadderFailureError(f"initial form has margin {lam:.3e}; a single rung needs > 0", rung=0)
    return ApproxLadder([(float(eps), init.v.copy())], strict=False, constants=[0.0],
                        margins=[lam], info={"mode": "single"})


def strictify(ladder, shift="harmonic"):
    """Add ``1/(j+1)`` (or ``2^-j`` with ``shift="geometric"``) to rung ``j``.

    The result is strictly decreasing with the same limit.
    """
    if shift == "harmonic":
        add = [1.0 / (j + 1) for j in range(len(ladder.entries))]
    elif shift == "geometric":
        add = [2.0 ** (-j) for j in range(len(ladder.entries))]
    else:
        raise ValueError("shift must be 'harmonic' or 'geometric'")
    entries = [(e, v + a) for (e, v), a in zip(ladder.entries, add)]
    consts = [c + a for c, a in zip(ladder.constants, add)] if ladder.constants else []
    return ApproxLadder(entries, strict=True, constants=consts, margins=list(ladder.margins),
                        info=dict(ladder.info))


def mollify_measure(target, eps, r_scale=0.05):
    """Mollified density at radius ``r_scale * eps``; keeps sup, inf and L^p bounds."""
    if not target.is_finite():
        raise InvalidMeasureError("density has non-finite values")
    if target.min() < 0:
        raise InvalidMeasureError(f"density is negative somewhere (min {target.min():.3e})")
    return mollify(target, r_scale * eps)


def measure_ladder(bg, target, eps_list, r_scale=0.05, cfg=None, margin=1e-8):
    """Ladder of solutions to ``(omega(eps) + i dd-bar v)^n = C_eps Omega_eps``.

    Each ``v_eps`` is normalised to zero mean by the solver, then constants
    are added (finest rung unshifted) to make the ladder non-increasing.
    """
    from .solvers import elliptic_solve

    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])) or min(eps_list) <= 0:
        raise ValueError("eps_list must be positive and strictly decreasing")
    total = integrate(target)
    if not total > 0:
        raise InvalidMeasureError("target measure has zero total mass")
    sols = []
    Cs = []
    for eps in eps_list:
        om = mollify_measure(target, eps, r_scale)
        form = bg.with_eps(eps).omega_eps
        C = integrate(ma_density(form)) / integrate(om)
        w, _ = elliptic_solve(form, om * C, cfg)
        sols.append(w)
        Cs.append(C)
    consts = _backward_constants(sols, None)
    entries = []
    margins = []
    for j, eps in enumerate(eps_list):
        vj = sols[j] + consts[j]
        lam = _form_margin(bg, eps, vj)
        if not lam > margin:
            raise LadderFailureError(f"rung {j}: solved form has margin {lam:.3e}", rung=j)
        entries.append((eps, vj))
        margins.append(lam)
    return ApproxLadder(entries, strict=False, constants=consts, margins=margins,
                        info={"mode": "measure", "C_eps": Cs, "r_scale": r_scale})

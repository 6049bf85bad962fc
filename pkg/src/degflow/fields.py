"""Periodic-grid calculus for scalar and Hermitian-matrix fields.

A grid for complex dimension ``n`` has ``2n`` periodic real axes ordered
``x_1, y_1, x_2, y_2, ...`` with ``z_j = x_j + i y_j``. Derivatives are taken
in Fourier space. First-derivative symbols have their Nyquist entry zeroed and
every second derivative is the product of two first-derivative symbols, which
makes the discrete complex Hessian exactly Hermitian and makes the discrete
Monge-Ampere mass identity hold to rounding.
"""

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from math import comb

import numpy as np
import scipy.fft

from .errors import InvalidFieldError, PositivityLossError
from .parallel import get_threads


@dataclass(frozen=True)
class GridSpec:
    n: int
    N: int
    period: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"complex dimension must be a positive integer, got {self.n}")
        if int(self.N) != self.N or self.N < 8 or (self.N & (self.N - 1)):
            raise ValueError(f"N must be a power of two >= 8, got {self.N}")
        if not self.period > 0:
            raise ValueError("period must be positive")

    @property
    def ndim(self):
        return 2 * self.n

    @property
    def shape(self):
        return (self.N,) * self.ndim

    @property
    def size(self):
        return self.N ** self.ndim

    @property
    def volume(self):
        return float(self.period) ** self.ndim

    @property
    def spacing(self):
        return self.period / self.N

    def coords(self):
        """Broadcastable coordinate arrays ``(x_1, y_1, ..., x_n, y_n)``."""
        return _coords(self)

    def x(self, j):
        return self.coords()[2 * j]

    def y(self, j):
        return self.coords()[2 * j + 1]


@lru_cache(maxsize=32)
def _coords(grid):
    pts = np.arange(grid.N) * grid.spacing
    out = []
    for axis in range(grid.ndim):
        shape = [1] * grid.ndim
        shape[axis] = grid.N
        out.append(pts.reshape(shape))
    return tuple(out)


@lru_cache(maxsize=32)
def _wavenumbers(grid):
    k = 2 * np.pi / grid.period * np.fft.fftfreq(grid.N, d=1.0 / grid.N)
    k[grid.N // 2] = 0.0
    out = []
    for axis in range(grid.ndim):
        shape = [1] * grid.ndim
        shape[axis] = grid.N
        out.append(k.reshape(shape))
    return tuple(out)


@lru_cache(maxsize=32)
def _hessian_symbols(grid):
    """Real symbols for ``d^2 u / dz_j dzbar_k`` on the half spectrum of ``rfftn``.

    Entry ``(j, k)`` (``j <= k``) is ``(re, im)`` with ``im = None`` on the
    diagonal, so that the Hessian entry is ``irfft(re * u^) + i irfft(im * u^)``.
    """
    ks = _wavenumbers(grid)
    half = grid.N // 2 + 1
    ks = [k[..., :half] if k.shape[-1] == grid.N else k for k in ks]
    kx = [ks[2 * j] for j in range(grid.n)]
    ky = [ks[2 * j + 1] for j in range(grid.n)]
    shape = grid.shape[:-1] + (half,)
    sym = {}
    for j in range(grid.n):
        for k in range(j, grid.n):
            re = np.ascontiguousarray(np.broadcast_to(-0.25 * (kx[j] * kx[k] + ky[j] * ky[k]), shape))
            im = None
            if j != k:
                im = np.ascontiguousarray(np.broadcast_to(-0.25 * (kx[j] * ky[k] - ky[j] * kx[k]), shape))
            sym[j, k] = (re, im)
    return sym


def fftn(a):
    return scipy.fft.fftn(a, workers=get_threads())


def ifftn(a):
    return scipy.fft.ifftn(a, workers=get_threads())


def rfftn(a):
    return scipy.fft.rfftn(a, workers=get_threads())


def irfftn(a, grid):
    return scipy.fft.irfftn(a, s=grid.shape, workers=get_threads())


def apply_symbol(values, sym, grid):
    """Apply a real, even Fourier symbol (half-spectrum layout) to real values."""
    return irfftn(rfftn(values) * sym, grid)


class ScalarField:
    """A real function sampled on a periodic grid."""

    __slots__ = ("grid", "values")

    def __init__(self, grid, values):
        arr = np.asarray(values, dtype=float)
        if arr.shape != grid.shape:
            arr = np.broadcast_to(arr, grid.shape)
        self.grid = grid
        self.values = np.ascontiguousarray(arr)

    @classmethod
    def constant(cls, grid, c):
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def from_function(cls, grid, func):
        return cls(grid, func(*grid.coords()))

    def copy(self):
        return ScalarField(self.grid, self.values.copy())

    def _other(self, other):
        if isinstance(other, ScalarField):
            return other.values
        return other

    def __add__(self, other):
        return ScalarField(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return ScalarField(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return ScalarField(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return ScalarField(self.grid, self.values / self._other(other))

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def max(self):
        return float(self.values.max())

    def min(self):
        return float(self.values.min())

    def sup_norm(self):
        return float(np.abs(self.values).max())

    def is_finite(self):
        return bool(np.isfinite(self.values).all())

    def __repr__(self):
        return f"ScalarField(n={self.grid.n}, N={self.grid.N}, min={self.min():.4g}, max={self.max():.4g})"


class HermitianField:
    """An ``n x n`` Hermitian matrix per grid point, stored as ``shape + (n, n)``."""

    __slots__ = ("grid", "values")

    def __init__(self, grid, values):
        arr = np.asarray(values, dtype=complex)
        full = grid.shape + (grid.n, grid.n)
        if arr.shape != full:
            arr = np.broadcast_to(arr, full)
        self.grid = grid
        self.values = np.ascontiguousarray(arr)

    @classmethod
    def constant(cls, grid, matrix):
        m = np.asarray(matrix, dtype=complex).reshape(grid.n, grid.n)
        if not np.allclose(m, m.conj().T, atol=1e-14, rtol=0):
            raise InvalidFieldError("constant matrix is not Hermitian")
        return cls(grid, np.broadcast_to(m, grid.shape + (grid.n, grid.n)))

    @classmethod
    def identity(cls, grid):
        return cls.constant(grid, np.eye(grid.n))

    def _other(self, other):
        if isinstance(other, HermitianField):
            return other.values
        return other

    def __add__(self, other):
        return HermitianField(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return HermitianField(self.grid, self.values - self._other(other))

    def __mul__(self, c):
        if isinstance(c, ScalarField):
            return HermitianField(self.grid, self.values * c.values[..., None, None])
        return HermitianField(self.grid, self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return HermitianField(self.grid, -self.values)

    def entry(self, j, k):
        return self.values[..., j, k]

    def hermitian_defect(self):
        v = self.values
        return float(np.abs(v - np.swapaxes(v.conj(), -1, -2)).max())

    def is_finite(self):
        return bool(np.isfinite(self.values).all())

    def check_positive(self, margin=0.0, what="form"):
        """Raise PositivityLossError unless min_eig > margin everywhere."""
        lam = min_eig(self).values
        idx = int(np.argmin(lam))
        if not lam.flat[idx] > margin:
            point = np.unravel_index(idx, self.grid.shape)
            raise PositivityLossError(
                f"{what} not positive: min eigenvalue {lam.flat[idx]:.3e} at grid point {point}",
                index=point,
                value=float(lam.flat[idx]),
            )
        return float(lam.flat[idx])

    def __repr__(self):
        return f"HermitianField(n={self.grid.n}, N={self.grid.N})"


def _require_finite(u):
    if not np.isfinite(u.values).all():
        raise InvalidFieldError("field has non-finite values")


def complex_hessian(u):
    """The field of ``d^2 u / dz_j dzbar_k`` (the coefficient matrix of i dd-bar u)."""
    _require_finite(u)
    grid = u.grid
    n = grid.n
    uh = rfftn(u.values)
    out = np.empty(grid.shape + (n, n), dtype=complex)
    for (j, k), (re, im) in _hessian_symbols(grid).items():
        hr = irfftn(re * uh, grid)
        if im is None:
            out[..., j, j] = hr
        else:
            hi = irfftn(im * uh, grid)
            out[..., j, k] = hr + 1j * hi
            out[..., k, j] = hr - 1j * hi
    return HermitianField(grid, out)


class TraceOperator:
    """``d -> tr(P . Hess d)`` for a fixed Hermitian field ``P`` (e.g. an inverse metric)."""

    def __init__(self, P):
        self.grid = P.grid
        v = P.values
        self.parts = {}
        for (j, k) in _hessian_symbols(self.grid):
            if j == k:
                self.parts[j, k] = (np.ascontiguousarray(v[..., j, j].real), None)
            else:
                pkj = v[..., k, j]
                self.parts[j, k] = (2.0 * np.ascontiguousarray(pkj.real), -2.0 * np.ascontiguousarray(pkj.imag))

    def apply_spectrum(self, d_hat):
        grid = self.grid
        acc = np.zeros(grid.shape)
        for key, (re, im) in _hessian_symbols(grid).items():
            a, b = self.parts[key]
            acc += a * irfftn(re * d_hat, grid)
            if im is not None:
                acc += b * irfftn(im * d_hat, grid)
        return acc

    def __call__(self, d):
        return self.apply_spectrum(rfftn(d))


def trace_hessian(P, u):
    """Pointwise ``tr(P . Hess u)`` for a HermitianField ``P`` and ScalarField ``u``."""
    return ScalarField(u.grid, TraceOperator(P)(u.values))


def constant_trace_symbol(grid, P):
    """Half-spectrum symbol of ``u -> tr(P . Hess u)`` for a constant Hermitian ``P``."""
    P = np.asarray(P, dtype=complex)
    acc = 0.0
    for (j, k), (re, im) in _hessian_symbols(grid).items():
        if im is None:
            acc = acc + P[j, j].real * re
        else:
            acc = acc + 2.0 * (P[k, j].real * re - P[k, j].imag * im)
    return acc


def ma_density(H):
    """Pointwise determinant (Monge-Ampere density against Euclidean volume)."""
    v = H.values
    n = H.grid.n
    if n == 1:
        d = v[..., 0, 0].real
    elif n == 2:
        d = v[..., 0, 0].real * v[..., 1, 1].real - np.abs(v[..., 0, 1]) ** 2
    else:
        d = np.linalg.det(v).real
    return ScalarField(H.grid, d)


def min_eig(H):
    v = H.values
    n = H.grid.n
    if n == 1:
        lam = v[..., 0, 0].real
    elif n == 2:
        a = v[..., 0, 0].real
        d = v[..., 1, 1].real
        half = 0.5 * (a - d)
        lam = 0.5 * (a + d) - np.sqrt(half * half + np.abs(v[..., 0, 1]) ** 2)
    else:
        lam = np.linalg.eigvalsh(v)[..., 0]
    return ScalarField(H.grid, lam)


def max_eig(H):
    v = H.values
    n = H.grid.n
    if n == 1:
        lam = v[..., 0, 0].real
    elif n == 2:
        a = v[..., 0, 0].real
        d = v[..., 1, 1].real
        half = 0.5 * (a - d)
        lam = 0.5 * (a + d) + np.sqrt(half * half + np.abs(v[..., 0, 1]) ** 2)
    else:
        lam = np.linalg.eigvalsh(v)[..., -1]
    return ScalarField(H.grid, lam)


def inverse(H):
    """Pointwise inverse; raises PositivityLossError where H is not positive."""
    H.check_positive(0.0, what="metric")
    v = H.values
    n = H.grid.n
    if n == 1:
        out = 1.0 / v
    elif n == 2:
        det = ma_density(H).values[..., None, None]
        out = np.empty_like(v)
        out[..., 0, 0] = v[..., 1, 1]
        out[..., 1, 1] = v[..., 0, 0]
        out[..., 0, 1] = -v[..., 0, 1]
        out[..., 1, 0] = -v[..., 1, 0]
        out = out / det
    else:
        out = np.linalg.inv(v)
    return HermitianField(H.grid, out)


def trace_pair(Htilde, alpha):
    """Pointwise ``tr(Htilde^{-1} alpha)``, the pairing of alpha against Htilde."""
    ginv = inverse(Htilde).values
    a = alpha.values
    n = Htilde.grid.n
    acc = np.zeros(Htilde.grid.shape)
    for j in range(n):
        acc += (ginv[..., j, j] * a[..., j, j]).real
        for k in range(j + 1, n):
            acc += 2.0 * (ginv[..., k, j] * a[..., j, k]).real
    return ScalarField(Htilde.grid, acc)


def rel_min_eig(H, G):
    """Smallest generalized eigenvalue of ``H`` relative to a positive ``G``."""
    n = H.grid.n
    if n == 1:
        return ScalarField(H.grid, H.values[..., 0, 0].real / G.values[..., 0, 0].real)
    L = np.linalg.cholesky(G.values)
    Linv = np.linalg.inv(L)
    M = Linv @ H.values @ np.swapaxes(Linv.conj(), -1, -2)
    return min_eig(HermitianField(H.grid, 0.5 * (M + np.swapaxes(M.conj(), -1, -2))))


def _principal_minor_sum(v, j):
    n = v.shape[-1]
    if j == 0:
        return np.ones(v.shape[:-2])
    if j == 1:
        return np.trace(v, axis1=-2, axis2=-1).real
    if j == n and n == 2:
        return (v[..., 0, 0] * v[..., 1, 1] - v[..., 0, 1] * v[..., 1, 0]).real
    acc = np.zeros(v.shape[:-2])
    for idx in combinations(range(n), j):
        sub = v[..., idx, :][..., :, idx]
        acc += np.linalg.det(sub).real
    return acc


def mixed_density(H, j, ref=None):
    """Density of ``H^j wedge ref^(n-j)`` against ``ref^n``.

    Equals ``sigma_j(eig(ref^{-1} H)) / binom(n, j)``; ``ref`` defaults to the
    Euclidean metric, so ``j = n`` gives ``ma_density``.
    """
    n = H.grid.n
    if not 0 <= j <= n:
        raise ValueError(f"power must be in [0, {n}]")
    v = H.values
    if ref is not None:
        v = inverse(ref).values @ v
    return ScalarField(H.grid, _principal_minor_sum(v, j) / comb(n, j))


def integrate(f):
    """Grid integral: mean value times total volume (fixed summation order)."""
    return float(np.sum(f.values) / f.grid.size * f.grid.volume)


def lp_norm(f, p):
    return integrate(ScalarField(f.grid, np.abs(f.values) ** p)) ** (1.0 / p)


def mean(f):
    return float(np.sum(f.values) / f.grid.size)

"""Restarted, right-preconditioned GMRES on flat float arrays.

Written out rather than taken from scipy so that every inner product is a
plain pairwise ``np.sum``: results are then independent of BLAS threading,
which keeps whole runs bit-reproducible across worker counts.
"""

import numpy as np


def _dot(a, b):
    return float(np.sum(a * b))


def gmres(matvec, b, precond=None, tol=1e-10, restart=30, maxiter=200, atol=0.0):
    """Solve ``A x = b``; returns ``(x, iterations, relative_residual)``.

    Stops once the residual 2-norm is below ``max(tol * |b|, atol)``.
    """
    shape = b.shape
    b = b.ravel()
    x = np.zeros_like(b)
    bnorm = np.sqrt(_dot(b, b))
    if bnorm == 0.0:
        return x.reshape(shape), 0, 0.0
    if precond is None:
        precond = lambda v: v

    def A(v):
        return matvec(v.reshape(shape)).ravel()

    def M(v):
        return precond(v.reshape(shape)).ravel()

    stop = max(tol * bnorm, atol)
    if bnorm <= stop:
        return x.reshape(shape), 0, 1.0
    r = b.copy()
    beta = bnorm
    total = 0
    while total < maxiter:
        V = [r / beta]
        Z = []
        H = np.zeros((restart + 1, restart))
        cs = np.zeros(restart)
        sn = np.zeros(restart)
        g = np.zeros(restart + 1)
        g[0] = beta
        k = 0
        for k in range(restart):
            z = M(V[k])
            w = A(z)
            Z.append(z)
            for i in range(k + 1):
                H[i, k] = _dot(w, V[i])
                w = w - H[i, k] * V[i]
            hk1 = np.sqrt(_dot(w, w))
            H[k + 1, k] = hk1
            for i in range(k):
                tmp = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = tmp
            denom = np.hypot(H[k, k], H[k + 1, k])
            if denom == 0.0:
                cs[k], sn[k] = 1.0, 0.0
            else:
                cs[k], sn[k] = H[k, k] / denom, H[k + 1, k] / denom
            H[k, k] = cs[k] * H[k, k] + sn[k] * H[k + 1, k]
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            total += 1
            if abs(g[k + 1]) <= stop or total >= maxiter or hk1 == 0.0:
                break
            V.append(w / hk1)
        m = k + 1
        y = np.zeros(m)
        for i in range(m - 1, -1, -1):
            y[i] = (g[i] - H[i, i + 1 : m] @ y[i + 1 : m]) / H[i, i] if H[i, i] != 0 else 0.0
        for i in range(m):
            x = x + y[i] * Z[i]
        r = b - A(x)
        beta = np.sqrt(_dot(r, r))
        if beta <= stop:
            break
    return x.reshape(shape), total, beta / bnorm

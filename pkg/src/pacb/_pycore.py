"""Pure-numpy versions of the hot kernels.

Mirrors the signatures in ``_core.pyx`` one for one; ``pacb.kernels`` picks
whichever is available at import time.
"""
import math

import numpy as np

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
ROUNDOFF = 16 * 2.220446049250313e-16


def _power_run(M, x, tol, max_iter):
    # Accept once the eigen-residual ||M^T M x - mu x|| is below tol * mu: some
    # eigenvalue then lies within that distance of mu, whereas a stalled mixture
    # of nearly equal top directions keeps a residual of the size of the gap.
    rtol = max(tol, ROUNDOFF * math.sqrt(x.size))
    mu = 0.0
    for it in range(1, max_iter + 1):
        y = M @ x
        mu = float(y @ y)
        z = M.T @ y
        nz = math.sqrt(float(z @ z))
        if nz == 0.0:
            return 0.0, it, True
        res = math.sqrt(float(np.sum((z - mu * x) ** 2)))
        x = z / nz
        if res <= rtol * mu:
            return mu, it, True
    return mu, max_iter, False


def power_iteration(M, tol, max_iter, seed):
    """Largest eigenvalue of M^T M by power iteration from two fixed starts.

    Returns ``(lambda_max, iterations, converged)``.  The first start is the
    normalized all-ones vector; the second is a seeded Gaussian vector, which
    also covers the case where the all-ones start lies in the null space.
    """
    M = np.ascontiguousarray(M, dtype=np.float64)
    n = M.shape[1]
    x0 = np.full(n, 1.0 / math.sqrt(n))
    mu1, it1, ok1 = _power_run(M, x0, tol, max_iter)
    rng = np.random.default_rng(seed)
    x1 = rng.standard_normal(n)
    x1 /= np.linalg.norm(x1)
    mu2, it2, ok2 = _power_run(M, x1, tol, max_iter)
    if mu2 > mu1:
        return mu2, it1 + it2, ok2
    return mu1, it1 + it2, ok1


def symbol_abs(t, omega):
    """|sum_i t_i exp(-1j * i * omega)| for every omega."""
    t = np.asarray(t, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    idx = np.arange(t.size)
    phase = np.outer(omega, idx)
    re = np.cos(phase) @ t
    im = np.sin(phase) @ t
    return np.hypot(re, im)


def _abs1(t, w):
    re = 0.0
    im = 0.0
    for i, ti in enumerate(t):
        re += ti * math.cos(i * w)
        im -= ti * math.sin(i * w)
    return math.hypot(re, im)


def golden_extremum(t, a, b, tol, maximize):
    """Golden-section search for the min (or max) of |psi| on [a, b]."""
    t = [float(v) for v in np.asarray(t, dtype=np.float64)]
    sign = -1.0 if maximize else 1.0
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc = sign * _abs1(t, c)
    fd = sign * _abs1(t, d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = sign * _abs1(t, c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = sign * _abs1(t, d)
    w = 0.5 * (a + b)
    return w, _abs1(t, w)


def banded_toeplitz_matvec(t, x):
    """y[r] = sum_s t[s] * x[r + s]  (upper-banded Toeplitz times x)."""
    t = np.asarray(t, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    y = np.zeros(n)
    for s in range(min(t.size, n)):
        if t[s] != 0.0:
            y[: n - s] += t[s] * x[s:]
    return y

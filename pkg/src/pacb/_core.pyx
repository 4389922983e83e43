# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Same contract as ``pacb._pycore``."""
import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt, cos, sin, fabs, hypot

cnp.import_array()

cdef double GOLDEN = 0.6180339887498949
cdef double ROUNDOFF = 16 * 2.220446049250313e-16


cdef tuple _power_run(const double[:, ::1] M, double[::1] x, double tol, int max_iter):
    # Accept once the eigen-residual ||M^T M x - mu x|| is below tol * mu.
    cdef Py_ssize_t m = M.shape[0], n = M.shape[1], i, j
    cdef double[::1] y = np.empty(m)
    cdef double[::1] z = np.empty(n)
    cdef double mu = 0.0, nz, acc, res, rtol
    cdef int it
    rtol = tol if tol > ROUNDOFF * sqrt(<double>n) else ROUNDOFF * sqrt(<double>n)
    for it in range(1, max_iter + 1):
        mu = 0.0
        for i in range(m):
            acc = 0.0
            for j in range(n):
                acc += M[i, j] * x[j]
            y[i] = acc
            mu += acc * acc
        for j in range(n):
            z[j] = 0.0
        for i in range(m):
            acc = y[i]
            for j in range(n):
                z[j] += M[i, j] * acc
        nz = 0.0
        res = 0.0
        for j in range(n):
            nz += z[j] * z[j]
            acc = z[j] - mu * x[j]
            res += acc * acc
        nz = sqrt(nz)
        if nz == 0.0:
            return 0.0, it, True
        for j in range(n):
            x[j] = z[j] / nz
        if sqrt(res) <= rtol * mu:
            return mu, it, True
    return mu, max_iter, False


def power_iteration(M, double tol, int max_iter, seed):
    cdef const double[:, ::1] Mv = np.ascontiguousarray(M, dtype=np.float64)
    cdef Py_ssize_t n = Mv.shape[1]
    x0 = np.full(n, 1.0 / sqrt(<double>n))
    mu1, it1, ok1 = _power_run(Mv, x0, tol, max_iter)
    rng = np.random.default_rng(seed)
    x1 = rng.standard_normal(n)
    x1 /= np.linalg.norm(x1)
    mu2, it2, ok2 = _power_run(Mv, x1, tol, max_iter)
    if mu2 > mu1:
        return mu2, it1 + it2, ok2
    return mu1, it1 + it2, ok1


cdef double _abs1(const double[::1] t, double w) nogil:
    cdef double re = 0.0, im = 0.0
    cdef Py_ssize_t i
    for i in range(t.shape[0]):
        re += t[i] * cos(i * w)
        im -= t[i] * sin(i * w)
    return hypot(re, im)


def symbol_abs(t, omega):
    cdef const double[::1] tv = np.ascontiguousarray(t, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(omega, dtype=np.float64)
    out = np.empty(wv.shape[0])
    cdef double[::1] ov = out
    cdef Py_ssize_t q
    for q in range(wv.shape[0]):
        ov[q] = _abs1(tv, wv[q])
    return out


def golden_extremum(t, double a, double b, double tol, bint maximize):
    cdef const double[::1] tv = np.ascontiguousarray(t, dtype=np.float64)
    cdef double sign = -1.0 if maximize else 1.0
    cdef double c = b - GOLDEN * (b - a)
    cdef double d = a + GOLDEN * (b - a)
    cdef double fc = sign * _abs1(tv, c)
    cdef double fd = sign * _abs1(tv, d)
    while b - a > tol:
        if fc < fd:
            b = d
            d = c
            fd = fc
            c = b - GOLDEN * (b - a)
            fc = sign * _abs1(tv, c)
        else:
            a = c
            c = d
            fc = fd
            d = a + GOLDEN * (b - a)
            fd = sign * _abs1(tv, d)
    cdef double w = 0.5 * (a + b)
    return w, _abs1(tv, w)


def banded_toeplitz_matvec(t, x):
    cdef const double[::1] tv = np.ascontiguousarray(t, dtype=np.float64)
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], k = tv.shape[0], r, s, top
    out = np.zeros(n)
    cdef double[::1] yv = out
    cdef double acc
    for r in range(n):
        acc = 0.0
        top = k if k < n - r else n - r
        for s in range(top):
            acc += tv[s] * xv[r + s]
        yv[r] = acc
    return out

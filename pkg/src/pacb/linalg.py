"""Dense and structured matrix primitives.

Matrices are plain ``numpy`` float64 arrays.  ``vec`` is row-major throughout
(``W.ravel()``), so the Jacobian of ``W @ a`` with respect to ``vec(W)`` is
``I kron a^T``.
"""
from __future__ import annotations

import math

import numpy as np

from . import kernels

SPECTRAL_TOL = 1e-10
POWER_SEED = 0x5EED


class ConvergenceError(RuntimeError):
    """Iterative routine stopped before meeting its tolerance."""

    def __init__(self, message, last_value):
        super().__init__(f"{message} (last value {last_value!r})")
        self.last_value = last_value


class NotPositiveDefiniteError(ValueError):
    pass


def as_matrix(M) -> np.ndarray:
    A = np.asarray(M, dtype=np.float64)
    if A.ndim != 2 or A.size == 0:
        raise ValueError(f"expected a nonempty 2-D matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def default_max_iter(shape) -> int:
    return 10 * max(shape) + 200


def spectral_norm(M, tol: float = SPECTRAL_TOL, max_iter: int | None = None) -> float:
    """Largest singular value of ``M`` via power iteration on ``M^T M``.

    Raises :class:`ConvergenceError` if the relative error estimate does not
    drop below ``tol`` within ``max_iter`` iterations.
    """
    A = as_matrix(M)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter is None:
        max_iter = default_max_iter(A.shape)
    if A.shape[0] == 1 or A.shape[1] == 1:
        return float(np.linalg.norm(A))
    mu, _, ok = kernels.power_iteration(A, tol, max_iter, POWER_SEED)
    if ok:
        return math.sqrt(max(mu, 0.0))
    # Stagnation (clustered top singular values): iterate on G^(2^(s-1)), G the
    # smaller Gram matrix, raising the eigenvalue gap ratio to the power 2^s.
    G = A @ A.T if A.shape[0] <= A.shape[1] else A.T @ A
    c = np.linalg.norm(G)
    if c == 0:
        return 0.0
    H = G / c
    log_c = math.log(c)  # H = G^(2^(s-1)) / exp(log_c)
    for s in range(1, 41):
        # relative error e in the top eigenvalue of G^(2^s) is e / 2^(s+1) in the norm
        lam, _, ok = kernels.power_iteration(H, min(tol * 2**s, 1e-3), max_iter, POWER_SEED)
        if ok and lam > 0:
            log_eig = (math.log(lam) + 2.0 * log_c) / 2**s
            return math.exp(0.5 * log_eig)
        H = H @ H
        H = 0.5 * (H + H.T)
        hn = np.linalg.norm(H)
        if hn == 0:
            break
        H /= hn
        log_c = 2.0 * log_c + math.log(hn)
    raise ConvergenceError("power iteration did not converge", math.sqrt(max(mu, 0.0)))


def frobenius_and_trace(M) -> tuple[float, float]:
    A = as_matrix(M)
    if A.shape[0] != A.shape[1]:
        raise ValueError("trace requires a square matrix")
    return float(np.sqrt(np.sum(A * A))), float(np.trace(A))


def frobenius(M) -> float:
    return float(np.linalg.norm(np.asarray(M, dtype=np.float64)))


def dft_matrix(h: int) -> np.ndarray:
    """Unitary DFT matrix, ``V[j, k] = exp(-2*pi*i*j*k/h) / sqrt(h)``."""
    if h < 1:
        raise ValueError("h must be >= 1")
    j = np.arange(h)
    return np.exp(-2j * np.pi * np.outer(j, j) / h) / math.sqrt(h)


def circulant_from_kernel(w) -> np.ndarray:
    """Circulant matrix with first column ``w``.

    ``C[r, c] = w[(r - c) mod h]``; its eigenvalues are ``np.fft.fft(w)``.
    """
    w = np.asarray(w, dtype=np.float64).ravel()
    h = w.size
    if h < 1:
        raise ValueError("kernel must be nonempty")
    idx = (np.arange(h)[:, None] - np.arange(h)[None, :]) % h
    return w[idx]


def circulant_gains(w) -> tuple[float, float]:
    """(normalized-DFT gain ||V^H w||_inf, exact eigenvalue gain ||fft(w)||_inf)."""
    w = np.asarray(w, dtype=np.float64).ravel()
    exact = float(np.max(np.abs(np.fft.fft(w))))
    return exact / math.sqrt(w.size), exact


def toeplitz_from_kernel(w, h: int) -> np.ndarray:
    """Banded ``h x h`` Toeplitz matrix with ``T[i, j] = w[j - i]`` for ``0 <= j-i < k``."""
    w = np.asarray(w, dtype=np.float64).ravel()
    k = w.size
    if k < 1:
        raise ValueError("kernel must be nonempty")
    if k > h:
        raise ValueError(f"kernel length {k} exceeds matrix size {h}")
    T = np.zeros((h, h))
    for s in range(k):
        idx = np.arange(h - s)
        T[idx, idx + s] = w[s]
    return T


def kernel_vec_map(h: int, k: int) -> np.ndarray:
    """Binary ``(h*h) x k`` matrix with ``vec(toeplitz_from_kernel(w, h)) = P @ w``."""
    if k > h:
        raise ValueError(f"kernel length {k} exceeds matrix size {h}")
    P = np.zeros((h * h, k))
    for s in range(k):
        i = np.arange(h - s)
        P[i * h + i + s, s] = 1.0
    return P


def kernel_vec_apply(u, h: int) -> np.ndarray:
    """``P @ u`` without forming ``P``."""
    return toeplitz_from_kernel(u, h).ravel()


def kernel_vec_adjoint(v, h: int, k: int) -> np.ndarray:
    """``P.T @ v``: sums of each of the first ``k`` superdiagonals of ``v`` as ``h x h``."""
    V = np.asarray(v, dtype=np.float64).reshape(h, h)
    return np.array([np.trace(V, offset=s) for s in range(k)])


def banded_toeplitz_apply(t, x) -> np.ndarray:
    """``T @ x`` for the upper-banded Toeplitz ``T[i, j] = t[j - i]`` of size ``len(x)``."""
    return kernels.banded_toeplitz_matvec(t, x)


def sample_gaussian(dim: int, cov, sigma2: float, seed: int) -> np.ndarray:
    """Draw ``u = sigma * R^{1/2} z`` with ``z ~ N(0, I)``.

    ``cov`` is ``None`` (identity), a dense SPD matrix, or any object with a
    ``sqrt_apply(z)`` method returning ``R^{1/2} z`` (the structured posterior
    covariances).
    """
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(dim)
    if sigma2 == 0:
        return np.zeros(dim)
    sigma = math.sqrt(sigma2)
    if cov is None:
        return sigma * z
    if hasattr(cov, "sqrt_apply"):
        return sigma * cov.sqrt_apply(z)
    R = as_matrix(cov)
    if R.shape != (dim, dim):
        raise ValueError(f"covariance shape {R.shape} does not match dim {dim}")
    if not np.allclose(R, R.T, atol=1e-12 * max(1.0, np.abs(R).max())):
        raise NotPositiveDefiniteError("covariance is not symmetric")
    try:
        L = np.linalg.cholesky(R)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("covariance is not positive definite") from exc
    return sigma * (L @ z)

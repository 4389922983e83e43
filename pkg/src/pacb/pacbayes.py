"""Posterior design: the concentration functional, variance choice, optimal
anisotropic covariance and the KL divergence to an isotropic prior."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sensitivity import (
    CirculantFreq,
    LowRank,
    ScalarIdentity,
    SensitivityMatrix,
    ToeplitzFactor,
)

LN2 = math.log(2.0)


def kappa() -> float:
    return 1.0 + 2.0 * LN2 + math.sqrt(4.0 * LN2)


def gamma_functional(tr: float, fro: float, spec: float, t: float = LN2) -> float:
    """``tr + sqrt(4 t) fro + 2 t spec`` for a PSD matrix summary."""
    slack = 1e-12 * max(abs(tr), 1.0)
    if not (-slack <= spec <= fro + slack and fro <= tr + slack):
        raise ValueError(f"expected 0 <= spec <= fro <= tr, got ({spec}, {fro}, {tr})")
    return tr + math.sqrt(4.0 * t) * fro + 2.0 * t * spec


def eta_squared(w_sq_norm: float, gamma: float) -> float:
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return 16.0 * kappa() * w_sq_norm / gamma**2


def choose_sigma2(approx_sens: list[SensitivityMatrix], gamma: float) -> float:
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    total = sum(s.trace_gram() for s in approx_sens)
    if total <= 0:
        raise ValueError("sensitivity matrices have zero total trace")
    return gamma**2 / (16.0 * math.e**2 * kappa() * total)


class Posterior:
    """Structured covariance ``R`` with its square root, trace and log-det."""

    dim: int

    def eigvals(self) -> np.ndarray:
        raise NotImplementedError

    def trace(self) -> float:
        return float(np.sum(self.eigvals()))

    def logdet(self) -> float:
        return float(np.sum(np.log(self.eigvals())))

    def sqrt_apply(self, z) -> np.ndarray:
        raise NotImplementedError

    def dense(self) -> np.ndarray:
        raise NotImplementedError


class ScalarPosterior(Posterior):
    def __init__(self, r: float, dim: int):
        self.r, self.dim = float(r), int(dim)

    def eigvals(self):
        return np.full(self.dim, self.r)

    def trace(self):
        return self.r * self.dim

    def logdet(self):
        return self.dim * math.log(self.r)

    def sqrt_apply(self, z):
        return math.sqrt(self.r) * np.asarray(z, dtype=np.float64)

    def dense(self):
        return self.r * np.eye(self.dim)


class EigenPosterior(Posterior):
    """``R = I + V diag(r - 1) V^T`` for orthonormal ``V``."""

    def __init__(self, vecs: np.ndarray, r: np.ndarray):
        self.vecs = vecs
        self.r = np.asarray(r, dtype=np.float64)
        self.dim = vecs.shape[0]

    def eigvals(self):
        return np.concatenate([self.r, np.ones(self.dim - self.r.size)])

    def trace(self):
        return float(self.dim - self.r.size + self.r.sum())

    def logdet(self):
        return float(np.sum(np.log(self.r)))

    def sqrt_apply(self, z):
        z = np.asarray(z, dtype=np.float64)
        return z + self.vecs @ ((np.sqrt(self.r) - 1.0) * (self.vecs.T @ z))

    def dense(self):
        return np.eye(self.dim) + (self.vecs * (self.r - 1.0)) @ self.vecs.T


class FourierPosterior(Posterior):
    """``R = V diag(r) V^H`` with ``r`` symmetric under ``j -> -j`` (so ``R`` is real)."""

    def __init__(self, r: np.ndarray):
        self.r = np.asarray(r, dtype=np.float64)
        self.dim = self.r.size

    def eigvals(self):
        return self.r

    def sqrt_apply(self, z):
        return np.fft.ifft(np.sqrt(self.r) * np.fft.fft(np.asarray(z, dtype=np.float64))).real

    def dense(self):
        return np.fft.ifft(self.r[:, None] * np.fft.fft(np.eye(self.dim), axis=0), axis=0).real


class DensePosterior(Posterior):
    def __init__(self, R: np.ndarray):
        self.R = np.asarray(R, dtype=np.float64)
        self.dim = self.R.shape[0]
        w, Q = np.linalg.eigh(self.R)
        if w.min() <= 0:
            raise ValueError("posterior covariance is not positive definite")
        self._w, self._Q = w, Q

    def eigvals(self):
        return self._w

    def sqrt_apply(self, z):
        return self._Q @ (np.sqrt(self._w) * (self._Q.T @ np.asarray(z, dtype=np.float64)))

    def dense(self):
        return self.R.copy()


def optimal_posterior(sens: SensitivityMatrix, eta2: float) -> Posterior:
    """Closed-form minimizer ``(I + eta2 A^T A)^-1`` in the structure of ``sens``."""
    if eta2 < 0:
        raise ValueError("eta2 must be nonnegative")
    if isinstance(sens, ScalarIdentity):
        return ScalarPosterior(1.0 / (1.0 + eta2 * sens.gain**2), sens.dim)
    if isinstance(sens, LowRank):
        return EigenPosterior(sens.vecs, 1.0 / (1.0 + eta2 * sens.gram_eigs()))
    if isinstance(sens, CirculantFreq):
        return FourierPosterior(1.0 / (1.0 + eta2 * sens.gram_eigs()))
    if isinstance(sens, ToeplitzFactor):
        M = np.eye(sens.dim) + eta2 * sens.gram()
        return DensePosterior(np.linalg.inv(M))
    raise TypeError(f"unsupported sensitivity form {type(sens).__name__}")


@dataclass(frozen=True)
class PosteriorSpec:
    sigma2: float
    eta2: float
    layers: tuple

    def sample(self, seed: int) -> list[np.ndarray]:
        """One draw ``u_l ~ N(0, sigma2 R_l)`` per layer from a single stream."""
        rng = np.random.default_rng(seed)
        s = math.sqrt(self.sigma2)
        return [s * R.sqrt_apply(rng.standard_normal(R.dim)) for R in self.layers]


def delta_fn(x: float) -> float:
    x2 = x * x
    return math.log1p(x2) - x2 / (1.0 + x2)


@dataclass(frozen=True)
class KlBreakdown:
    weight_term: float
    trace_term: float
    logdet_term: float
    dim_term: float
    total: float
    relaxed_total: float | None = None

    def to_dict(self) -> dict:
        return {
            "weight_term": self.weight_term,
            "trace_term": self.trace_term,
            "logdet_term": self.logdet_term,
            "dim_term": self.dim_term,
            "total": self.total,
            "relaxed_total": self.relaxed_total,
        }


def kl_divergence(w_norm2: float, sigma2: float, posts: list[Posterior], relaxed: float | None = None) -> KlBreakdown:
    """KL of ``N(w, sigma2 R)`` from ``N(0, sigma2 I)``, split into its terms.

    ``trace_term + logdet_term + dim_term`` is ``0.5 * sum(Tr R - log det R - dim)``.
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    weight = w_norm2 / (2.0 * sigma2)
    tr = sum(p.trace() for p in posts)
    ld = 0.0
    for p in posts:
        if np.min(p.eigvals()) <= 0:
            raise ValueError("posterior covariance is not positive definite")
        ld += p.logdet()
    dims = sum(p.dim for p in posts)
    # per-layer sums Tr R - log det R - dim are nonnegative; clamp round-off
    shape = max(0.5 * (tr - ld - dims), 0.0)
    return KlBreakdown(weight, 0.5 * tr, -0.5 * ld, -0.5 * dims, weight + shape, relaxed)


def relaxed_kl(w_norm2: float, sigma2: float, eta2: float, sens: list[SensitivityMatrix]) -> float:
    """Upper bound from ``delta(x) <= x^2``: ``w_norm2/(2 sigma2) + eta2/2 * sum Tr(A^T A)``."""
    return w_norm2 / (2.0 * sigma2) + 0.5 * eta2 * sum(s.trace_gram() for s in sens)


def d_objective(R, A, eta2: float) -> float:
    """``eta2 Tr(A R A^T) + Tr R - log det R`` for dense ``R`` and ``A``."""
    R = np.asarray(R, dtype=np.float64)
    A = np.asarray(A)
    if np.linalg.eigvalsh(0.5 * (R + R.T)).min() <= 0:
        return math.inf
    logdet = np.linalg.slogdet(R)[1]
    return float(eta2 * np.real(np.trace(A @ R @ A.conj().T)) + np.trace(R) - logdet)

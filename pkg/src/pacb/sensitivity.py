"""Structured per-layer sensitivity matrices ``A_l``.

Each form keeps its gain split into a structural constant and a product of
the other layers' gains (``prod``), so that :func:`approximate` can swap the
learned product for its grid value ``beta_hat ** (d - 1)`` without touching
the eigen-structure.

All forms act on the parameter vector actually perturbed: ``vec(W_l)``
(row-major) for dense/residual layers, the kernel for circulant/Toeplitz
layers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import kernels, linalg
from .networks import Network, layer_jacobian

E = math.e
CIRC_GAINS = ("literal", "exact")
SINGULAR_PSI = 1e-12


def _others_product(gains, l: int) -> float:
    return float(np.prod(np.delete(np.asarray(gains, dtype=np.float64), l)))


@dataclass(frozen=True, eq=False)
class SensitivityMatrix:
    layer: int
    dim: int  # number of perturbed parameters of this layer
    const: float  # structural factor (e sqrt(d) B, sqrt(d) B, ...)
    prod: float  # product of the other layers' gains
    depth: int
    residual: bool = False
    info: dict = field(default_factory=dict)

    form = "abstract"

    @property
    def gain(self) -> float:
        return self.const * self.prod

    # subclasses implement the remaining interface
    def gram_eigs(self) -> np.ndarray:
        """Eigenvalues of ``A^T A`` that differ from zero structurally."""
        raise NotImplementedError

    def trace_gram(self) -> float:
        return float(np.sum(self.gram_eigs()))

    def sq_norm(self, u) -> float:
        raise NotImplementedError

    def project_support(self, u) -> np.ndarray:
        return np.asarray(u, dtype=np.float64)

    def gram(self) -> np.ndarray:
        raise NotImplementedError

    def dense(self) -> np.ndarray:
        raise NotImplementedError

    def spectral_norm(self) -> float:
        eig = self.gram_eigs()
        return float(math.sqrt(eig.max())) if eig.size else 0.0

    def frobenius(self) -> float:
        return math.sqrt(self.trace_gram())

    def with_prod(self, prod: float) -> "SensitivityMatrix":
        return replace(self, prod=float(prod))


@dataclass(frozen=True, eq=False)
class ScalarIdentity(SensitivityMatrix):
    """``A_l = gain * I``."""

    form = "scalar_identity"

    def gram_eigs(self):
        return np.full(self.dim, self.gain**2)

    def trace_gram(self):
        return self.gain**2 * self.dim

    def sq_norm(self, u):
        u = np.asarray(u, dtype=np.float64).ravel()
        return float(self.gain**2 * (u @ u))

    def gram(self):
        return self.gain**2 * np.eye(self.dim)

    def dense(self):
        return self.gain * np.eye(self.dim)


@dataclass(frozen=True, eq=False)
class LowRank(SensitivityMatrix):
    """``A_l = sqrt(d) V diag(s, ..., s) V^T`` with ``s = B * prod``."""

    vecs: np.ndarray = None  # dim x r, orthonormal columns

    form = "lowrank"

    @property
    def rank(self) -> int:
        return int(self.vecs.shape[1])

    @property
    def singular_gains(self) -> np.ndarray:
        # sigma_{l,k}; const holds B, sqrt(d) applied separately
        return np.full(self.rank, self.const * self.prod)

    def gram_eigs(self):
        return self.depth * self.singular_gains**2

    def sq_norm(self, u):
        c = self.vecs.T @ np.asarray(u, dtype=np.float64).ravel()
        return float(self.depth * np.sum((self.singular_gains * c) ** 2))

    def project_support(self, u):
        u = np.asarray(u, dtype=np.float64).ravel()
        return self.vecs @ (self.vecs.T @ u)

    def gram(self):
        return (self.vecs * self.gram_eigs()) @ self.vecs.T

    def dense(self):
        return math.sqrt(self.depth) * (self.vecs * self.singular_gains) @ self.vecs.T


def fourier_mask(h: int, K: int) -> np.ndarray:
    """Weights ``c_j`` of the real Gram ``Re(V_K V_K^H) = V diag(c) V^H``."""
    j = np.arange(h)
    first = (j < K).astype(np.float64)
    mirrored = (((-j) % h) < K).astype(np.float64)
    return 0.5 * (first + mirrored)


@dataclass(frozen=True, eq=False)
class CirculantFreq(SensitivityMatrix):
    """``A_l = scale * V_[1:K] V_[1:K]^H`` with ``scale = sqrt(d) B prod``."""

    K: int = 1

    form = "circulant_freq"

    @property
    def h(self) -> int:
        return self.dim

    def mask(self) -> np.ndarray:
        return fourier_mask(self.dim, self.K)

    def gram_eigs(self):
        # eigenvalues of the real operator u -> ||A u||^2, indexed by frequency
        return self.gain**2 * self.mask()

    def trace_gram(self):
        return self.gain**2 * self.K

    def sq_norm(self, u):
        uf = np.fft.fft(np.asarray(u, dtype=np.float64).ravel()) / math.sqrt(self.dim)
        return float(self.gain**2 * np.sum(np.abs(uf[: self.K]) ** 2))

    def project_support(self, u):
        u = np.asarray(u, dtype=np.float64).ravel()
        active = (self.mask() > 0).astype(np.float64)
        return np.fft.ifft(active * np.fft.fft(u)).real

    def gram(self):
        V = linalg.dft_matrix(self.dim)
        return (self.gain**2 * (V * self.mask()) @ V.conj().T).real

    def dense(self):
        V = linalg.dft_matrix(self.dim)[:, : self.K]
        return self.gain * V @ V.conj().T


@dataclass(frozen=True, eq=False)
class ToeplitzFactor(SensitivityMatrix):
    """``A_l = scale * T P`` with ``T`` the ``h^2 x h^2`` symbol matrix."""

    h: int = 1
    symbol: tuple = (1.0,)
    psi_min: float = 1.0
    tp: np.ndarray = None  # T @ P, (h*h) x k

    form = "toeplitz_factor"

    def core_gram(self) -> np.ndarray:
        """``P^T T^T T P`` (k x k)."""
        return self.tp.T @ self.tp

    def gram(self):
        return self.gain**2 * self.core_gram()

    def gram_eigs(self):
        return np.clip(np.linalg.eigvalsh(self.gram()), 0.0, None)

    def trace_gram(self):
        return float(self.gain**2 * np.sum(self.tp * self.tp))

    def sq_norm(self, u):
        v = self.tp @ np.asarray(u, dtype=np.float64).ravel()
        return float(self.gain**2 * (v @ v))

    def dense(self):
        return self.gain * self.tp


def layer_gains(net: Network, kind: str, circ_gain: str = "exact") -> np.ndarray:
    """Per-layer gains whose products enter ``A_l`` for the given structure."""
    if kind == "circulant":
        if circ_gain not in CIRC_GAINS:
            raise ValueError(f"circ_gain must be one of {CIRC_GAINS}")
        pick = 0 if circ_gain == "literal" else 1
        return np.array([linalg.circulant_gains(L.weight)[pick] for L in net.layers])
    return net.spectral_norms()


def _require(net: Network, kinds, name):
    if net.kind not in kinds:
        raise ValueError(f"{name} sensitivity needs a {' or '.join(kinds)} network, got {net.kind}")


def build_diagonal(net: Network, B: float) -> list[ScalarIdentity]:
    _require(net, ("dense",), "diagonal")
    norms = net.spectral_norms()
    if np.any(norms == 0):
        raise ValueError("zero spectral norm: diagonal gain undefined")
    d = net.depth
    const = E * math.sqrt(d) * B
    return [
        ScalarIdentity(l, L.n_params, const, _others_product(norms, l), d)
        for l, L in enumerate(net.layers)
    ]


def build_residual(net: Network, B: float) -> list[ScalarIdentity]:
    _require(net, ("residual",), "residual")
    shifted = net.spectral_norms() + 1.0
    d = net.depth
    const = E * math.sqrt(d) * B
    return [
        ScalarIdentity(l, L.n_params, const, _others_product(shifted, l), d, residual=True)
        for l, L in enumerate(net.layers)
    ]


def build_lowrank(net: Network, B: float, anchor_x) -> list[LowRank]:
    _require(net, ("dense",), "low-rank")
    anchor_x = np.asarray(anchor_x, dtype=np.float64)
    if np.linalg.norm(anchor_x) > B * (1 + 1e-12):
        raise ValueError("anchor input lies outside the radius B")
    norms = net.spectral_norms()
    if np.any(norms == 0):
        raise ValueError("zero spectral norm: low-rank gain undefined")
    d = net.depth
    out = []
    for l, L in enumerate(net.layers):
        J = layer_jacobian(net, anchor_x, l)
        try:
            _, s, Vt = np.linalg.svd(J, full_matrices=False)
        except np.linalg.LinAlgError as exc:
            raise RuntimeError(f"SVD of layer {l} Jacobian failed") from exc
        tol = s.max() * max(J.shape) * np.finfo(float).eps if s.size else 0.0
        jac_rank = int(np.sum(s > tol))
        out.append(
            LowRank(
                l, L.n_params, B, _others_product(norms, l), d,
                info={"jacobian_rank": jac_rank, "jacobian_singular_values": s.tolist()},
                vecs=Vt.T.copy(),
            )
        )
    return out


def build_circulant(net: Network, B: float, circ_gain: str = "exact") -> list[CirculantFreq]:
    _require(net, ("circulant",), "circulant")
    K = net.output_dim
    h = net.layers[0].size
    if K > h:
        raise ValueError("output rank K must not exceed h")
    gains = layer_gains(net, "circulant", circ_gain)
    d = net.depth
    const = math.sqrt(d) * B
    return [
        CirculantFreq(l, L.n_params, const, _others_product(gains, l), d, info={"circ_gain": circ_gain}, K=K)
        for l, L in enumerate(net.layers)
    ]


class ToeplitzSymbol(NamedTuple):
    coefficients: tuple
    grid: int = 4096

    @classmethod
    def identity(cls) -> "ToeplitzSymbol":
        return cls((1.0,))

    @classmethod
    def geometric(cls, rho: float, length: int = 2) -> "ToeplitzSymbol":
        """One-sided geometric sequence ``t_i = rho**i``, ``i < length``."""
        if not 0 <= rho < 1:
            raise ValueError("rho must lie in [0, 1)")
        return cls(tuple(float(rho**i) for i in range(length)))


class SymbolExtrema(NamedTuple):
    psi_min: float
    psi_max: float
    omega_min: float
    omega_max: float
    singular: bool


def _local_extrema(vals: np.ndarray, maximize: bool, limit: int = 8) -> np.ndarray:
    v = -vals if maximize else vals
    left = np.roll(v, 1)
    right = np.roll(v, -1)
    cand = np.flatnonzero((v <= left) & (v <= right))
    if cand.size == 0:
        cand = np.array([int(np.argmin(v))])
    return cand[np.argsort(v[cand])][:limit]


def symbol_extrema(symbol: ToeplitzSymbol, tol: float = 1e-8) -> SymbolExtrema:
    """Min and max of ``|psi(omega)|`` over ``[0, 2 pi]``.

    Uniform grid scan followed by golden-section refinement around the best
    grid extrema.
    """
    t = np.asarray(symbol.coefficients, dtype=np.float64)
    N = int(symbol.grid)
    if N < 4096:
        raise ValueError("symbol grid resolution must be at least 4096")
    step = 2 * math.pi / N
    omega = np.arange(N) * step  # periodic grid; 2*pi coincides with 0
    vals = kernels.symbol_abs(t, omega)
    results = []
    for maximize in (False, True):
        best_w = float(omega[np.argmax(vals) if maximize else np.argmin(vals)])
        best = float(vals.max() if maximize else vals.min())
        for q in _local_extrema(vals, maximize):
            w, f = kernels.golden_extremum(t, omega[q] - step, omega[q] + step, tol, maximize)
            if (f > best) if maximize else (f < best):
                best, best_w = float(f), float(w % (2 * math.pi))
        results.append((best, best_w))
    (pmin, wmin), (pmax, wmax) = results
    return SymbolExtrema(pmin, pmax, wmin, wmax, pmin < SINGULAR_PSI)


_TP_CACHE: dict = {}


def toeplitz_tp(symbol: ToeplitzSymbol, h: int, k: int) -> np.ndarray:
    """``T @ P`` for the ``h^2 x h^2`` banded Toeplitz ``T`` built from ``symbol``."""
    key = (tuple(symbol.coefficients), h, k)
    if key not in _TP_CACHE:
        t = np.asarray(symbol.coefficients, dtype=np.float64)
        cols = []
        for s in range(k):
            e = np.zeros(k)
            e[s] = 1.0
            cols.append(linalg.banded_toeplitz_apply(t, linalg.kernel_vec_apply(e, h)))
        tp = np.column_stack(cols)
        tp.setflags(write=False)
        _TP_CACHE[key] = tp
    return _TP_CACHE[key]


def build_toeplitz(net: Network, B: float, symbol: ToeplitzSymbol | None = None) -> list[ToeplitzFactor]:
    _require(net, ("toeplitz",), "Toeplitz")
    symbol = symbol or ToeplitzSymbol.identity()
    ext = symbol_extrema(symbol)
    if ext.psi_min <= 0 or ext.singular:
        raise ValueError(f"Toeplitz symbol is singular (psi_min={ext.psi_min:.3g})")
    norms = net.spectral_norms()
    d = net.depth
    const = E * math.sqrt(d) * B / ext.psi_min
    out = []
    for l, L in enumerate(net.layers):
        tp = toeplitz_tp(symbol, L.size, L.n_params)
        out.append(
            ToeplitzFactor(
                l, L.n_params, const, _others_product(norms, l), d,
                info={"psi_min": ext.psi_min, "psi_max": ext.psi_max},
                h=L.size, symbol=tuple(symbol.coefficients), psi_min=ext.psi_min, tp=tp,
            )
        )
    return out


def approximate(sens: SensitivityMatrix, beta_hat: float) -> SensitivityMatrix:
    """Replace the learned product of other-layer gains by its grid value.

    ``beta_hat`` is on the scale of the structure's layer gains.  Residual
    forms use ``(beta_hat + 1) ** (d - 1)``.
    """
    if sens.residual:
        if beta_hat + 1 <= 0:
            raise ValueError("beta_hat + 1 must be positive")
        return sens.with_prod((beta_hat + 1.0) ** (sens.depth - 1))
    if beta_hat <= 0:
        raise ValueError("beta_hat must be positive")
    return sens.with_prod(beta_hat ** (sens.depth - 1))


def build(net: Network, kind: str, B: float, *, anchor_x=None, symbol=None, circ_gain="exact"):
    """Dispatch to the builder for ``kind`` (diagonal, residual, lowrank, circulant, toeplitz)."""
    if kind == "diagonal":
        return build_diagonal(net, B)
    if kind == "residual":
        return build_residual(net, B)
    if kind == "lowrank":
        if anchor_x is None:
            raise ValueError("low-rank sensitivity needs an anchor input")
        return build_lowrank(net, B, anchor_x)
    if kind == "circulant":
        return build_circulant(net, B, circ_gain)
    if kind == "toeplitz":
        return build_toeplitz(net, B, symbol)
    raise ValueError(f"unknown structure {kind!r}")

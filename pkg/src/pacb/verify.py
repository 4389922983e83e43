"""Independent oracles and Monte Carlo checks for the analytic steps.

Every Monte Carlo routine derives per-sample generators from ``seed + index``,
so results are reproducible bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .networks import Dataset, Network, forward, layer_jacobian, perturb
from .pacbayes import Posterior, PosteriorSpec
from .sensitivity import SensitivityMatrix

SIGMAS = 3.0


@dataclass(frozen=True)
class McResult:
    name: str
    n_samples: int
    success_count: int
    frequency: float
    binomial_std_err: float
    threshold: float
    passed: bool
    seed: int
    rule: str  # "at_least", "at_most" or "no_violations"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_samples": self.n_samples,
            "success_count": self.success_count,
            "frequency": self.frequency,
            "binomial_std_err": self.binomial_std_err,
            "threshold": self.threshold,
            "pass": self.passed,
            "seed": self.seed,
            "rule": self.rule,
            "extra": self.extra,
        }


def _binomial(name, count, n, threshold, rule, seed, extra=None) -> McResult:
    freq = count / n
    se = math.sqrt(threshold * (1.0 - threshold) / n)
    if rule == "at_least":
        ok = freq >= threshold - SIGMAS * se
    else:
        ok = freq <= threshold + SIGMAS * se
    return McResult(name, n, int(count), freq, se, threshold, bool(ok), seed, rule, extra or {})


def _violations(name, count, n, seed, extra=None) -> McResult:
    return McResult(name, n, int(count), count / n if n else 0.0, 0.0, 0.0, count == 0, seed, "no_violations", extra or {})


def _max_output_change(net: Network, base: np.ndarray, X: np.ndarray, u) -> float:
    out = forward(perturb(net, u), X)
    return float(np.max(np.abs(out - base)))


@dataclass(frozen=True)
class ConditionResult:
    direct: McResult
    surrogate: McResult

    @property
    def chain_slack(self) -> bool:
        """Direct event holds while the surrogate chain does not."""
        return self.direct.passed and not self.surrogate.passed


def mc_perturbation_condition(
    net: Network,
    data: Dataset,
    post: PosteriorSpec,
    sens: list[SensitivityMatrix],
    gamma: float,
    n: int,
    seed: int,
) -> ConditionResult:
    """Frequency of ``max_x ||f_{w+u}(x) - f_w(x)||_inf < gamma/4`` and of
    ``sum_l ||A_l u_l||^2 < gamma^2/16`` under ``u ~ N(0, sigma2 R)``."""
    if n < 1000:
        raise ValueError("need at least 1000 samples")
    X = data.inputs
    base = forward(net, X)
    direct = surrogate = 0
    for i in range(n):
        u = post.sample(seed + i)
        if sum(s.sq_norm(ul) for s, ul in zip(sens, u)) < gamma**2 / 16:
            surrogate += 1
        if _max_output_change(net, base, X, u) < gamma / 4:
            direct += 1
    # E sum ||A_l u_l||^2 relative to the event level; its inverse is the slack in sigma2
    mean = post.sigma2 * sum(float(weighted_gram_eigs(s, p).sum()) for s, p in zip(sens, post.layers))
    return ConditionResult(
        _binomial("perturbation_condition", direct, n, 0.5, "at_least", seed),
        _binomial(
            "perturbation_condition_surrogate", surrogate, n, 0.5, "at_least", seed,
            {"expected_over_level": mean / (gamma**2 / 16)},
        ),
    )


def param_spectral_norm(net: Network, l: int, u) -> float:
    """Spectral norm of the weight-matrix perturbation induced by ``u`` at layer ``l``."""
    L = net.layers[l]
    u = np.asarray(u, dtype=np.float64)
    if L.kind == "circulant":
        return float(np.max(np.abs(np.fft.fft(u.ravel()))))
    if L.kind == "toeplitz":
        return linalg.spectral_norm(linalg.toeplitz_from_kernel(u, L.size))
    U = u.reshape(L.weight.shape)
    return float(np.linalg.norm(U, 2))


def validity_radius(net: Network, l: int) -> float:
    s = net.layers[l].spectral_norm
    if net.kind == "residual":
        s += 1.0
    return s / net.depth


def sample_valid_perturbation(net: Network, sens: list[SensitivityMatrix] | None, rng) -> list[np.ndarray]:
    """Random ``u`` restricted to each structure's domain with ``||U_l||_2`` at a
    uniform random fraction of the validity radius."""
    out = []
    for l, L in enumerate(net.layers):
        u = rng.standard_normal(L.n_params)
        if sens is not None:
            u = sens[l].project_support(u)
        norm = param_spectral_norm(net, l, u)
        target = rng.uniform(0.0, 1.0) * validity_radius(net, l)
        out.append(u * (target / norm) if norm > 0 else np.zeros_like(u))
    return out


def mc_perturbation_bound(
    net: Network,
    data: Dataset,
    sens: list[SensitivityMatrix],
    n: int,
    seed: int,
    validity: bool = True,
    scale: float = 1.0,
) -> McResult:
    """Violations of ``max_x ||f_{w+u}(x) - f_w(x)||_inf^2 <= sum_l ||A_l u_l||^2``.

    With ``validity=False`` the samples are plain Gaussians times ``scale``
    and the result is marked out of contract.
    """
    X = data.inputs
    base = forward(net, X)
    bad = 0
    worst = 0.0
    for i in range(n):
        rng = np.random.default_rng(seed + i)
        if validity:
            u = sample_valid_perturbation(net, sens, rng)
        else:
            u = [scale * rng.standard_normal(L.n_params) for L in net.layers]
        lhs = _max_output_change(net, base, X, u) ** 2
        rhs = sum(s.sq_norm(ul) for s, ul in zip(sens, u))
        if rhs > 0:
            worst = max(worst, lhs / rhs)
        if lhs > rhs * (1 + 1e-12) + 1e-300:
            bad += 1
    return _violations("perturbation_bound", bad, n, seed, {"max_ratio": worst, "in_contract": validity})


def _dense_sqrt(post: Posterior) -> np.ndarray:
    return np.column_stack([post.sqrt_apply(e) for e in np.eye(post.dim)])


def concentration_threshold(sens: SensitivityMatrix, post: Posterior, sigma2: float, t: float) -> float:
    """``sigma2 (Tr M + sqrt(4t)||M||_F + 2t||M||_2)`` for ``M = A R A^T``."""
    S = _dense_sqrt(post)
    M = S.T @ sens.gram() @ S  # same nonzero spectrum as A R A^T
    eig = np.clip(np.linalg.eigvalsh(0.5 * (M + M.T)), 0.0, None)
    return sigma2 * (eig.sum() + math.sqrt(4 * t) * math.sqrt(np.sum(eig**2)) + 2 * t * eig.max(initial=0.0))


def mc_concentration(
    sens: SensitivityMatrix,
    post: Posterior,
    sigma2: float,
    t: float,
    n: int,
    seed: int,
    chunk: int = 10_000,
) -> McResult:
    """Exceedance frequency of ``||A u||^2`` above the quadratic-form tail level vs ``exp(-t)``."""
    if t <= 0:
        raise ValueError("t must be positive")
    level = concentration_threshold(sens, post, sigma2, t)
    A = sens.dense()
    S = _dense_sqrt(post)
    rng = np.random.default_rng(seed)
    exceed = 0
    done = 0
    while done < n:
        b = min(chunk, n - done)
        U = math.sqrt(sigma2) * rng.standard_normal((b, post.dim)) @ S.T
        vals = np.sum(np.abs(U @ A.T) ** 2, axis=1)
        exceed += int(np.sum(vals > level))
        done += b
    return _binomial("concentration", exceed, n, math.exp(-t), "at_most", seed, {"t": t, "level": level})


def weighted_gram_eigs(sens: SensitivityMatrix, post: Posterior) -> np.ndarray:
    """Eigenvalues of ``R^{1/2} A^T A R^{1/2}`` (the nonzero spectrum of ``A R A^T``)."""
    from .pacbayes import DensePosterior, EigenPosterior, FourierPosterior, ScalarPosterior
    from .sensitivity import CirculantFreq, LowRank, ScalarIdentity

    if isinstance(sens, ScalarIdentity) and isinstance(post, ScalarPosterior):
        return sens.gram_eigs() * post.r
    if isinstance(sens, LowRank) and isinstance(post, EigenPosterior) and post.vecs is sens.vecs:
        return sens.gram_eigs() * post.r
    if isinstance(sens, CirculantFreq) and isinstance(post, FourierPosterior):
        return sens.gram_eigs() * post.r
    if isinstance(post, DensePosterior):
        S = post._Q * np.sqrt(post._w)
    else:
        S = _dense_sqrt(post)
    M = S.T @ sens.gram() @ S
    return np.clip(np.linalg.eigvalsh(0.5 * (M + M.T)), 0.0, None)


def mc_concentration_block(
    sens: list[SensitivityMatrix],
    posts: list[Posterior],
    sigma2: float,
    t: float,
    n: int,
    seed: int,
) -> McResult:
    """Tail check for ``sum_l ||A_l u_l||^2`` with ``u_l ~ N(0, sigma2 R_l)``
    against the block-diagonal level ``sigma2 (Tr M + sqrt(4t)||M||_F + 2t||M||_2)``."""
    if t <= 0:
        raise ValueError("t must be positive")
    eig = np.concatenate([weighted_gram_eigs(s, p) for s, p in zip(sens, posts)])
    level = sigma2 * (eig.sum() + math.sqrt(4 * t) * math.sqrt(np.sum(eig**2)) + 2 * t * eig.max(initial=0.0))
    spec = PosteriorSpec(sigma2, 0.0, tuple(posts))
    exceed = 0
    for i in range(n):
        u = spec.sample(seed + i)
        if sum(s.sq_norm(ul) for s, ul in zip(sens, u)) > level:
            exceed += 1
    return _binomial("concentration", exceed, n, math.exp(-t), "at_most", seed, {"t": t, "level": level})


def oracle_min_D(A, eta2: float, iters: int = 10_000, tol: float = 1e-10) -> np.ndarray:
    """Minimize ``eta2 Tr(A R A^T) + Tr R - log det R`` over SPD ``R`` numerically.

    Gradient descent in the eigen-parameterization ``R = R^{1/2} exp(-step S) R^{1/2}``
    (affine-invariant geometry) with backtracking; stops when the Euclidean
    gradient ``eta2 A^T A + I - R^{-1}`` has Frobenius norm below ``tol``.
    """
    A = np.asarray(A)
    if A.ndim != 2:
        raise ValueError("A must be a matrix")
    n = A.shape[1]
    if n > 50:
        raise ValueError("oracle is meant for dim <= 50")
    C = eta2 * np.real(A.conj().T @ A)
    C = 0.5 * (C + C.T)

    def objective(w, Q):
        R = (Q * w) @ Q.T
        return float(np.sum(C * R) + w.sum() - np.sum(np.log(w)))

    w, Q = np.ones(n), np.eye(n)
    f = objective(w, Q)
    for _ in range(iters):
        R = (Q * w) @ Q.T
        Rinv = (Q / w) @ Q.T
        grad = C + np.eye(n) - Rinv
        if np.linalg.norm(grad) < tol:
            return R
        half = (Q * np.sqrt(w)) @ Q.T
        S = half @ grad @ half  # Riemannian gradient
        ev, EV = np.linalg.eigh(0.5 * (S + S.T))
        step = 1.0
        while True:
            E = (EV * np.exp(-step * ev)) @ EV.T
            Rn = half @ E @ half
            wn, Qn = np.linalg.eigh(0.5 * (Rn + Rn.T))
            if wn.min() > 0:
                fn = objective(wn, Qn)
                if fn <= f - 1e-4 * step * np.sum(ev**2) or step < 1e-12:
                    break
            step *= 0.5
        w, Q, f = wn, Qn, fn
    raise linalg.ConvergenceError("D-objective descent did not converge", f)


def finite_diff_jacobian(net: Network, x, l: int, eps: float = 1e-5) -> np.ndarray:
    """Central differences of ``f(x)`` with respect to row-major ``vec(W_l)``."""
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    x = np.asarray(x, dtype=np.float64)
    W = net.layers[l].weight
    cols = []
    for j in range(W.size):
        e = np.zeros(W.size)
        e[j] = eps
        u = [np.zeros(L.n_params) for L in net.layers]
        u[l] = e
        plus = forward(perturb(net, u), x)
        u[l] = -e
        minus = forward(perturb(net, u), x)
        cols.append((plus - minus) / (2 * eps))
    return np.column_stack(cols)


def check_neyshabur_perturbation(net: Network, data: Dataset, n: int, seed: int) -> McResult:
    """Violations of ``||f_{w+u}(x) - f_w(x)||_2 <= e ||x|| prod ||W_l|| sum ||U_l||/||W_l||``
    with ``||U_l||_2 <= ||W_l||_2 / d``."""
    if net.kind != "dense":
        raise ValueError("dense networks only")
    X = data.inputs
    base = forward(net, X)
    xnorm = np.linalg.norm(X, axis=1)
    norms = net.spectral_norms()
    prod = float(np.prod(norms))
    bad = 0
    worst = 0.0
    for i in range(n):
        rng = np.random.default_rng(seed + i)
        u = sample_valid_perturbation(net, None, rng)
        ratio = sum(param_spectral_norm(net, l, ul) / norms[l] for l, ul in enumerate(u))
        rhs = math.e * xnorm * prod * ratio
        lhs = np.linalg.norm(forward(perturb(net, u), X) - base, axis=1)
        mask = rhs > 0
        if np.any(mask):
            worst = max(worst, float(np.max(lhs[mask] / rhs[mask])))
        bad += int(np.any(lhs > rhs * (1 + 1e-12) + 1e-300))
    return _violations("output_change_lemma", bad, n, seed, {"max_ratio": worst})


def jacobian_spectral_bound_ok(net: Network, x, l: int, slack: float = 1e-9) -> bool:
    """``||J_l(x)||_2 <= ||x|| prod_{i != l} ||W_i||_2``."""
    J = layer_jacobian(net, x, l)
    norms = net.spectral_norms()
    bound = np.linalg.norm(x) * float(np.prod(np.delete(norms, l)))
    return float(np.linalg.norm(J, 2)) <= bound * (1 + slack) + slack

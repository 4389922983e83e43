"""Spectral complexities, the beta grid and the end-to-end certificate."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import sensitivity as sens_mod
from .networks import Dataset, Network, empirical_margin_loss, forward, spectral_normalize
from .pacbayes import (
    KlBreakdown,
    PosteriorSpec,
    choose_sigma2,
    eta_squared,
    kl_divergence,
    optimal_posterior,
    relaxed_kl,
)
from .sensitivity import ToeplitzSymbol, approximate, symbol_extrema

STRUCTURES = ("diagonal", "residual", "lowrank", "circulant", "toeplitz")
NET_KIND = {
    "diagonal": "dense",
    "lowrank": "dense",
    "residual": "residual",
    "circulant": "circulant",
    "toeplitz": "toeplitz",
}
COMPLEXITY_KIND = {
    "diagonal": "phi",
    "lowrank": "phi",
    "residual": "phi_rn",
    "circulant": "phi_circ",
    "toeplitz": "phi_toep",
}
_COMPLEXITY_NET = {"phi": "dense", "phi_rn": "residual", "phi_circ": "circulant", "phi_toep": "toeplitz"}


def structures_for(net_kind: str) -> list[str]:
    return [s for s in STRUCTURES if NET_KIND[s] == net_kind]


@dataclass(frozen=True)
class ComplexityValue:
    """``value = product * sum_term * ratio``.

    ``product`` is the product of squared layer gains, ``sum_term`` the sum of
    squared parameter norms each divided by its own squared gain, and
    ``ratio`` the squared symbol range for Toeplitz layers (1 otherwise).
    ``max_over_layers`` is the alternative ``max_l prod_{i != l} g_i^2 *
    sum_l ||w_l||^2 * ratio``.
    """

    kind: str
    value: float
    product: float
    sum_term: float
    ratio: float
    max_over_layers: float

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "value": self.value,
            "product": self.product,
            "sum_term": self.sum_term,
            "ratio": self.ratio,
            "max_over_layers": self.max_over_layers,
        }


def complexity(net: Network, kind: str, symbol: ToeplitzSymbol | None = None, circ_gain: str = "exact") -> ComplexityValue:
    if kind not in _COMPLEXITY_NET:
        raise ValueError(f"unknown complexity kind {kind!r}")
    if _COMPLEXITY_NET[kind] != net.kind:
        raise ValueError(f"{kind} needs a {_COMPLEXITY_NET[kind]} network, got {net.kind}")
    ratio = 1.0
    if kind == "phi":
        gains = net.spectral_norms()
        sizes = np.array([np.sum(L.weight**2) for L in net.layers])
    elif kind == "phi_rn":
        gains = net.spectral_norms() + 1.0
        sizes = np.array([np.sum(L.weight**2) for L in net.layers])
    elif kind == "phi_circ":
        gains = sens_mod.layer_gains(net, "circulant", circ_gain)
        sizes = np.array([np.sum(L.weight**2) for L in net.layers])
    else:
        gains = np.array([np.sum(np.abs(L.weight)) for L in net.layers])
        sizes = np.array([np.sum(L.weight**2) for L in net.layers])
        ext = symbol_extrema(symbol or ToeplitzSymbol.identity())
        if ext.singular:
            raise ValueError("Toeplitz symbol is singular")
        ratio = (ext.psi_max / ext.psi_min) ** 2
    if np.any(gains <= 0):
        raise ValueError("zero layer gain: complexity undefined")
    g2 = gains**2
    product = float(np.prod(g2))
    sum_term = float(np.sum(sizes / g2))
    others = np.array([np.prod(np.delete(g2, l)) for l in range(len(g2))])
    max_over = float(others.max() * sizes.sum() * ratio)
    return ComplexityValue(kind, product * sum_term * ratio, product, sum_term, ratio, max_over)


def delta_factor(
    net: Network,
    structure: str,
    K: int | None = None,
    k: int | None = None,
    symbol: ToeplitzSymbol | None = None,
    circ_gain: str = "exact",
) -> float:
    """Leading complexity factor of the structure: ``d^2 h^2 Phi``, ``d^2 K Phi``, ``d^2 k Phi_toep`` ..."""
    if structure not in STRUCTURES:
        raise ValueError(f"unknown structure {structure!r}")
    d = net.depth
    K = net.output_dim if K is None else K
    phi = complexity(net, COMPLEXITY_KIND[structure], symbol, circ_gain).value
    if structure in ("diagonal", "residual"):
        return d**2 * net.width**2 * phi
    if structure in ("lowrank", "circulant"):
        return d**2 * K * phi
    if structure == "toeplitz":
        k = net.layers[0].n_params if k is None else k
        return d**2 * k * phi
    raise ValueError(f"unknown structure {structure!r}")


@dataclass(frozen=True)
class BetaGrid:
    beta_min: float
    beta_max: float
    radius: float
    points: tuple

    @property
    def size(self) -> int:
        return len(self.points)

    def contains(self, beta: float) -> bool:
        return self.beta_min <= beta <= self.beta_max

    def select(self, beta: float) -> float:
        """Nearest grid point; ties go to the smaller point."""
        pts = np.asarray(self.points)
        return float(pts[int(np.argmin(np.abs(pts - beta)))])

    def to_dict(self) -> dict:
        return {"beta_min": self.beta_min, "beta_max": self.beta_max, "radius": self.radius, "size": self.size}


def beta_grid(gamma: float, B: float, d: int, m: int) -> BetaGrid:
    if gamma <= 0 or B <= 0:
        raise ValueError("gamma and B must be positive")
    if d < 1 or m < 1:
        raise ValueError("d and m must be positive")
    bmin = (gamma / (2 * B)) ** (1.0 / d)
    bmax = (gamma * math.sqrt(m) / (2 * B)) ** (1.0 / d)
    radius = bmin / d
    count = max(math.ceil((bmax - bmin) / (2 * radius) - 1e-12), 0) + 1
    points = tuple(float(bmin + 2 * radius * j) for j in range(count))
    return BetaGrid(bmin, bmax, radius, points)


def pac_bayes_bound(loss: float, kl: float, m: int, delta: float, grid_size: int = 1) -> float:
    """``loss + 4 sqrt((kl + ln(6 m grid_size / delta)) / (m - 1))``."""
    if m < 2:
        raise ValueError("need at least 2 samples")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return loss + 4.0 * math.sqrt((kl + math.log(6.0 * m * grid_size / delta)) / (m - 1))


@dataclass(frozen=True)
class CertifyConfig:
    symbol: ToeplitzSymbol = field(default_factory=ToeplitzSymbol.identity)
    circ_gain: str = "exact"
    anchor_index: int | None = None  # low-rank anchor row; default: largest-norm input
    mc_samples: int = 10_000  # 0 disables the Monte Carlo diagnostics
    mc_bound_samples: int = 500
    seed: int = 0
    sigma2_scale: float = 1.0  # multiplies the sampling variance in the MC checks only


@dataclass(frozen=True)
class BoundReport:
    structure: str
    empirical_margin_loss: float
    beta: float
    beta_hat: float
    sigma2: float
    kl: KlBreakdown
    complexity: ComplexityValue
    final_bound: float
    asymptotic_delta_factor: float
    trivial_flag: bool
    mc_diagnostics: dict
    diagnostics: dict

    def to_dict(self) -> dict:
        return {
            "structure": self.structure,
            "empirical_margin_loss": self.empirical_margin_loss,
            "beta": self.beta,
            "beta_hat": self.beta_hat,
            "sigma2": self.sigma2,
            "kl": self.kl.to_dict(),
            "complexity": self.complexity.to_dict(),
            "final_bound": self.final_bound,
            "asymptotic_delta_factor": self.asymptotic_delta_factor,
            "trivial_flag": self.trivial_flag,
            "mc_diagnostics": self.mc_diagnostics,
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @property
    def mc_passed(self) -> bool:
        return bool(self.mc_diagnostics.get("pass", True))

    def to_markdown(self) -> str:
        kl = self.kl
        rows = [
            ("structure", self.structure),
            ("empirical_margin_loss", _fmt(self.empirical_margin_loss)),
            ("beta", _fmt(self.beta)),
            ("beta_hat", _fmt(self.beta_hat)),
            ("sigma2", _fmt(self.sigma2)),
            ("kl (exact)", _fmt(kl.total)),
            ("kl (relaxed)", _fmt(kl.relaxed_total)),
            ("kl weight_term", _fmt(kl.weight_term)),
            ("kl trace_term", _fmt(kl.trace_term)),
            ("kl logdet_term", _fmt(kl.logdet_term)),
            ("kl dim_term", _fmt(kl.dim_term)),
            (f"complexity ({self.complexity.kind})", _fmt(self.complexity.value)),
            ("final_bound", _fmt(self.final_bound)),
            ("asymptotic_delta_factor", _fmt(self.asymptotic_delta_factor)),
            ("trivial_flag", str(self.trivial_flag).lower()),
            ("mc_diagnostics pass", str(self.mc_passed).lower() if self.mc_diagnostics else "not run"),
        ]
        lines = [f"## Certificate: {self.structure}", "", "| field | value |", "|---|---|"]
        lines += [f"| {k} | {v} |" for k, v in rows]
        if self.mc_diagnostics:
            lines += ["", "| check | frequency | threshold | pass |", "|---|---|---|---|"]
            for name in sorted(self.mc_diagnostics.get("checks", {})):
                c = self.mc_diagnostics["checks"][name]
                lines.append(f"| {name} | {_fmt(c['frequency'])} | {_fmt(c['threshold'])} | {str(c['pass']).lower()} |")
        for note in self.diagnostics.get("notes", []):
            lines.append(f"\n- {note}")
        return "\n".join(lines) + "\n"


def _fmt(x) -> str:
    if x is None:
        return "n/a"
    return f"{x:.6g}"


def comparison_markdown(reports: list[BoundReport]) -> str:
    """One row per structure: the leading complexity factor next to the certified bound."""
    lines = [
        "| structure | leading factor | complexity | KL (exact) | final bound | trivial |",
        "|---|---|---|---|---|---|",
    ]
    form = {
        "diagonal": "d^2 h^2 Phi",
        "residual": "d^2 h^2 Phi_rn",
        "lowrank": "d^2 K Phi",
        "circulant": "d^2 K Phi_circ",
        "toeplitz": "d^2 k Phi_toep",
    }
    for r in reports:
        lines.append(
            f"| {r.structure} | {form[r.structure]} = {_fmt(r.asymptotic_delta_factor)} | "
            f"{_fmt(r.complexity.value)} | {_fmt(r.kl.total)} | {_fmt(r.final_bound)} | {str(r.trivial_flag).lower()} |"
        )
    return "\n".join(lines) + "\n"


def _grid_beta(net: Network, structure: str, circ_gain: str) -> float:
    """The network's beta on the scale of the structure's layer gains."""
    if structure == "residual":
        return float(net.spectral_norms().max()) + 1.0
    gains = sens_mod.layer_gains(net, NET_KIND[structure], circ_gain)
    return float(np.exp(np.mean(np.log(gains))))


def certify(
    net: Network,
    data: Dataset,
    gamma: float,
    delta: float,
    structure: str,
    config: CertifyConfig | None = None,
) -> BoundReport:
    from . import verify  # Monte Carlo diagnostics

    config = config or CertifyConfig()
    if structure not in STRUCTURES:
        raise ValueError(f"unknown structure {structure!r}")
    if NET_KIND[structure] != net.kind:
        raise ValueError(f"structure {structure} needs a {NET_KIND[structure]} network, got {net.kind}")
    if gamma <= 0 or not 0 < delta < 1:
        raise ValueError("need gamma > 0 and 0 < delta < 1")
    if data.dim != net.input_dim:
        raise ValueError(f"dataset dimension {data.dim} does not match network input {net.input_dim}")
    data.check_classes(net.output_dim)
    m, d, B = data.size, net.depth, data.radius_B
    notes = []

    # 1. spectral normalization (function preserving)
    norm_net, beta_norm = spectral_normalize(net)
    before = forward(net, data.inputs)
    after = forward(norm_net, data.inputs)
    norm_change = float(np.max(np.abs(after - before)) / max(np.max(np.abs(before)), 1e-300))
    loss = empirical_margin_loss(norm_net, data, gamma)

    # 2. beta and its grid point
    beta = _grid_beta(norm_net, structure, config.circ_gain)
    grid = beta_grid(gamma, B, d, m)
    in_range = grid.contains(beta)
    beta_hat = grid.select(beta)
    if structure == "residual":
        notes.append("residual: grid variable is max_l ||W_l||_2 + 1; network is not rescaled")

    # 3. sensitivity matrices and their grid approximants
    anchor = config.anchor_index
    if structure == "lowrank" and anchor is None:
        anchor = int(np.argmax(np.linalg.norm(data.inputs, axis=1)))
    sens = sens_mod.build(
        norm_net,
        structure,
        B,
        anchor_x=data.inputs[anchor] if structure == "lowrank" else None,
        symbol=config.symbol,
        circ_gain=config.circ_gain,
    )
    shift = 1.0 if structure == "residual" else 0.0
    approx = [approximate(s, beta_hat - shift) for s in sens]

    # 4-6. variance, optimal posterior, KL
    sigma2 = choose_sigma2(approx, gamma)
    w2 = norm_net.param_sq_norm()
    eta2 = eta_squared(w2, gamma)
    posts = [optimal_posterior(s, eta2) for s in sens]
    relaxed = relaxed_kl(w2, sigma2, eta2, sens)
    kl = kl_divergence(w2, sigma2, posts, relaxed)

    # 7. certified bound with the union correction over the grid
    computed = pac_bayes_bound(loss, kl.total, m, delta, grid.size)
    relaxed_bound = pac_bayes_bound(loss, relaxed, m, delta, grid.size)
    if in_range:
        final = computed
    else:
        final = max(1.0, loss)
        notes.append("beta outside the nontrivial range: bound is trivially 1")
    trivial = (not in_range) or final >= 1.0

    # 8. leading-factor comparison
    cplx = complexity(norm_net, COMPLEXITY_KIND[structure], config.symbol, config.circ_gain)
    dfac = delta_factor(norm_net, structure, symbol=config.symbol, circ_gain=config.circ_gain)

    diagnostics = {
        "net_kind": net.kind,
        "m": m,
        "depth": d,
        "width": net.width,
        "output_dim": net.output_dim,
        "gamma": gamma,
        "delta": delta,
        "radius_B": B,
        "beta_normalization": beta_norm,
        "normalization_max_rel_change": norm_change,
        "in_range": in_range,
        "grid": grid.to_dict(),
        "union_log_term": math.log(6.0 * m * grid.size / delta),
        "eta2": eta2,
        "param_sq_norm": w2,
        "trace_gram_total": float(sum(s.trace_gram() for s in sens)),
        "trace_gram_approx_total": float(sum(s.trace_gram() for s in approx)),
        "bound_at_nearest_point": computed,
        "relaxed_bound": relaxed_bound,
        "complexity_max_over_layers": cplx.max_over_layers,
        "notes": notes,
    }
    if structure == "lowrank":
        diagnostics["anchor_index"] = anchor
        diagnostics["jacobian_ranks"] = [s.info["jacobian_rank"] for s in sens]
        diagnostics["lowrank_ranks"] = [s.rank for s in sens]
    if structure == "circulant":
        diagnostics["circ_gain"] = config.circ_gain
        other = "literal" if config.circ_gain == "exact" else "exact"
        diagnostics[f"complexity_{other}_gain"] = complexity(norm_net, "phi_circ", circ_gain=other).value
        if norm_net.output_dim < norm_net.layers[0].size:
            notes.append("circulant: output is the first K coordinates of the last layer")
    if structure == "toeplitz":
        ext = symbol_extrema(config.symbol)
        diagnostics["symbol"] = list(config.symbol.coefficients)
        diagnostics["psi_min"] = ext.psi_min
        diagnostics["psi_max"] = ext.psi_max

    mc = {}
    if config.mc_samples > 0:
        post_spec = PosteriorSpec(sigma2 * config.sigma2_scale, eta2, tuple(posts))
        cond = verify.mc_perturbation_condition(norm_net, data, post_spec, sens, gamma, config.mc_samples, config.seed)
        conc = verify.mc_concentration_block(sens, posts, sigma2 * config.sigma2_scale, math.log(2.0), config.mc_samples, config.seed)
        pbound = verify.mc_perturbation_bound(norm_net, data, sens, config.mc_bound_samples, config.seed)
        checks = {
            "perturbation_condition": cond.direct.to_dict(),
            "perturbation_condition_surrogate": cond.surrogate.to_dict(),
            "concentration": conc.to_dict(),
            "perturbation_bound": pbound.to_dict(),
        }
        mc = {
            "checks": checks,
            "chain_slack": cond.chain_slack,
            "pass": bool(cond.direct.passed and conc.passed and pbound.passed),
            "seed": config.seed,
        }

    return BoundReport(
        structure=structure,
        empirical_margin_loss=loss,
        beta=beta,
        beta_hat=beta_hat,
        sigma2=sigma2,
        kl=kl,
        complexity=cplx,
        final_bound=final,
        asymptotic_delta_factor=dfac,
        trivial_flag=trivial,
        mc_diagnostics=mc,
        diagnostics=diagnostics,
    )

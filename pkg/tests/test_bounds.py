import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pacb.bounds import (
    CertifyConfig,
    beta_grid,
    certify,
    comparison_markdown,
    complexity,
    delta_factor,
    pac_bayes_bound,
)
from pacb.networks import Dataset, Layer, Network, spectral_normalize
from pacb.pacbayes import kappa
from pacb.sensitivity import ToeplitzSymbol, symbol_extrema

from conftest import dense_net

NO_MC = CertifyConfig(mc_samples=0)


def test_complexity_identity_example():
    net = Network("dense", [Layer("dense", np.eye(2)), Layer("dense", np.eye(2))], 2, 2)
    c = complexity(net, "phi")
    assert c.value == pytest.approx(4.0)
    assert (c.product, c.sum_term, c.ratio) == pytest.approx((1.0, 4.0, 1.0))


def test_complexity_rank_one_layers():
    rng = np.random.default_rng(0)
    layers = [Layer("dense", np.outer(rng.standard_normal(r), rng.standard_normal(c))) for r, c in ((4, 3), (5, 4), (2, 5))]
    net = Network("dense", layers, 3, 2)
    c = complexity(net, "phi")
    assert c.sum_term == pytest.approx(3.0, rel=1e-9)
    assert c.value == pytest.approx(c.product * 3.0, rel=1e-9)


def test_complexity_toeplitz_unit_kernels():
    # ||w_i||_1 = 1 for every layer, so the value is prod ||w_i||_1^2 * sum ||w_l||_2^2
    ws = [np.array([0.5, -0.5]), np.array([0.25, 0.75]), np.array([1.0, 0.0])]
    net = Network("toeplitz", [Layer("toeplitz", w, 5) for w in ws], 5, 2)
    c = complexity(net, "phi_toep", ToeplitzSymbol.identity())
    assert c.value == pytest.approx(sum(float(w @ w) for w in ws), rel=1e-12)
    geo = complexity(net, "phi_toep", ToeplitzSymbol.geometric(0.5))
    assert geo.ratio == pytest.approx(9.0, rel=1e-9)
    assert geo.value == pytest.approx(9.0 * c.value, rel=1e-9)


def test_complexity_residual_and_circulant(small_nets):
    net, _ = small_nets["residual"]
    g = net.spectral_norms() + 1
    sizes = [float(np.sum(L.weight**2)) for L in net.layers]
    expect = sum(np.prod(np.delete(g**2, l)) * sizes[l] for l in range(net.depth))
    assert complexity(net, "phi_rn").value == pytest.approx(expect, rel=1e-9)
    cnet, _ = small_nets["circulant"]
    lit = complexity(cnet, "phi_circ", circ_gain="literal").value
    ex = complexity(cnet, "phi_circ", circ_gain="exact").value
    h = cnet.layers[0].size
    assert ex == pytest.approx(lit * h ** (cnet.depth - 1), rel=1e-9)


def test_complexity_errors(small_nets):
    net, _ = small_nets["dense"]
    with pytest.raises(ValueError):
        complexity(net, "phi_circ")
    with pytest.raises(ValueError):
        complexity(net, "psi")
    zero = Network("dense", [Layer("dense", np.zeros((2, 2))), Layer("dense", np.eye(2))], 2, 2)
    with pytest.raises(ValueError):
        complexity(zero, "phi")


def test_max_over_layers_dominates(small_nets):
    for kind, cplx in (("dense", "phi"), ("residual", "phi_rn"), ("circulant", "phi_circ"), ("toeplitz", "phi_toep")):
        c = complexity(small_nets[kind][0], cplx)
        assert c.max_over_layers >= c.value / small_nets[kind][0].depth * (1 - 1e-12)


def test_delta_factor_table(small_nets):
    net, _ = small_nets["dense"]
    d, h, K = net.depth, net.width, net.output_dim
    phi = complexity(net, "phi").value
    assert delta_factor(net, "diagonal") == pytest.approx(d**2 * h**2 * phi)
    assert delta_factor(net, "lowrank") / delta_factor(net, "diagonal") == pytest.approx(K / h**2, rel=1e-12)
    cnet, _ = small_nets["circulant"]
    assert delta_factor(cnet, "circulant") == pytest.approx(9 * cnet.output_dim * complexity(cnet, "phi_circ").value)
    ones = Network("toeplitz", [Layer("toeplitz", [1.0], 4), Layer("toeplitz", [-1.0], 4)], 4, 2)
    assert delta_factor(ones, "toeplitz") == pytest.approx(2**2 * 1 * 2.0)
    with pytest.raises(ValueError):
        delta_factor(net, "hexagonal")


def test_beta_grid_degenerate():
    g = beta_grid(2.0, 1.0, 3, 1)
    assert g.beta_min == g.beta_max == 1.0 and g.size == 1


def test_beta_grid_ratio():
    d = 3
    g = beta_grid(0.7, 2.0, d, math.exp(2 * d))
    assert g.beta_max / g.beta_min == pytest.approx(math.e, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 10), st.floats(0.1, 20), st.integers(2, 5), st.integers(2, 5000))
def test_beta_grid_cover(gamma, B, d, m):
    g = beta_grid(gamma, B, d, m)
    pts = np.array(g.points)
    assert g.beta_min == pytest.approx((gamma / (2 * B)) ** (1 / d))
    assert g.beta_max == pytest.approx((gamma * math.sqrt(m) / (2 * B)) ** (1 / d))
    assert g.radius == pytest.approx(g.beta_min / d)
    assert np.all(np.diff(pts) <= 2 * g.radius * (1 + 1e-12))
    assert pts[-1] >= g.beta_max * (1 - 1e-12)
    assert g.size <= math.ceil(d * m ** (1 / (2 * d))) + 1
    betas = np.random.default_rng(m).uniform(g.beta_min, g.beta_max, 1000)
    for b in betas:
        assert abs(g.select(b) - b) <= g.radius * (1 + 1e-9)
        assert abs(g.select(b) - b) <= b / d


def test_beta_grid_ties_and_errors():
    g = beta_grid(0.5, 1.0, 2, 4000)
    mid = 0.5 * (g.points[0] + g.points[1])
    assert g.select(mid) == g.points[0]
    with pytest.raises(ValueError):
        beta_grid(0.0, 1.0, 2, 10)
    with pytest.raises(ValueError):
        beta_grid(1.0, 1.0, 0, 10)


def test_pac_bayes_bound():
    assert pac_bayes_bound(0.1, 5.0, 1000, 0.05) == pytest.approx(0.1 + 4 * math.sqrt((5 + math.log(6000 / 0.05)) / 999))
    assert pac_bayes_bound(0.1, 5.0, 1000, 0.05, 1) == pac_bayes_bound(0.1, 5.0, 1000, 0.05)
    ms = [10, 100, 1000, 10**4]
    vals = [pac_bayes_bound(0.1, 5.0, m, 0.05, 7) for m in ms]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        pac_bayes_bound(0.1, 1.0, 1, 0.05)
    with pytest.raises(ValueError):
        pac_bayes_bound(0.1, 1.0, 10, 1.5)


def _blob_dense(seed=0, m=300):
    from pacb.cli import generate_blobs, generate_network

    return generate_network("dense", 3, 8, 2, init="aligned", seed=seed), generate_blobs(m, 8, seed=seed)


def test_certify_report_invariants():
    net, data = _blob_dense()
    for s in ("diagonal", "lowrank"):
        r = certify(net, data, 0.6, 0.05, s, NO_MC)
        dg = r.diagnostics
        assert r.final_bound >= r.empirical_margin_loss
        assert r.trivial_flag == ((not dg["in_range"]) or r.final_bound >= 1)
        assert dg["normalization_max_rel_change"] < 1e-9
        # sigma2 is the variance choice for the grid approximants
        assert r.sigma2 * 16 * math.e**2 * kappa() * dg["trace_gram_approx_total"] == pytest.approx(0.6**2, rel=1e-12)
        assert r.kl.relaxed_total >= r.kl.total
        assert r.mc_diagnostics == {}


def test_certify_lowrank_not_above_diagonal():
    net, data = _blob_dense(1)
    diag = certify(net, data, 0.6, 0.05, "diagonal", NO_MC)
    low = certify(net, data, 0.6, 0.05, "lowrank", NO_MC)
    assert low.kl.total <= diag.kl.total
    assert low.diagnostics["bound_at_nearest_point"] <= diag.diagnostics["bound_at_nearest_point"]


def test_certify_tiny_weights_trivial():
    net, data = _blob_dense()
    tiny = net.with_weights([1e-4 * L.weight for L in net.layers])
    r = certify(tiny, data, 0.6, 0.05, "diagonal", NO_MC)
    assert not r.diagnostics["in_range"]
    assert r.empirical_margin_loss == 1.0
    assert r.trivial_flag and r.final_bound == 1.0


def test_certify_in_range_point():
    # beta^d <= gamma sqrt(m) / (2B) needs sqrt(m) >= 2 * 9.8 * 1.05^3 / 0.6, about 38
    net, data = _blob_dense(m=2000)
    r = certify(net, data, 0.6, 0.05, "diagonal", NO_MC)
    assert r.diagnostics["in_range"]
    assert r.final_bound == r.diagnostics["bound_at_nearest_point"]
    assert abs(r.beta - r.beta_hat) <= r.beta / net.depth


def test_certify_permutation_invariance():
    net, data = _blob_dense(2)
    perm = np.random.default_rng(0).permutation(data.dim)
    W = [L.weight for L in net.layers]
    pnet = net.with_weights([W[0][:, perm]] + W[1:])
    pdata = Dataset(data.inputs[:, perm], data.labels, data.radius_B)
    a = certify(net, data, 0.6, 0.05, "diagonal", NO_MC)
    b = certify(pnet, pdata, 0.6, 0.05, "diagonal", NO_MC)
    assert b.complexity.value == pytest.approx(a.complexity.value, rel=1e-9)
    assert b.final_bound == pytest.approx(a.final_bound, rel=1e-9)
    assert b.diagnostics["bound_at_nearest_point"] == pytest.approx(a.diagnostics["bound_at_nearest_point"], rel=1e-9)


def test_certify_errors(small_nets):
    net, data = small_nets["dense"]
    with pytest.raises(ValueError):
        certify(net, data, 0.5, 0.05, "circulant", NO_MC)
    with pytest.raises(ValueError):
        certify(net, data, 0.0, 0.05, "diagonal", NO_MC)
    with pytest.raises(ValueError):
        certify(net, data, 0.5, 0.05, "octagonal", NO_MC)
    bad = Dataset(np.ones((3, 4)), [1, 2, 1], 5.0)
    with pytest.raises(ValueError):
        certify(net, bad, 0.5, 0.05, "diagonal", NO_MC)
    many = Dataset(data.inputs[:3], [1, 2, 3], data.radius_B)
    with pytest.raises(ValueError):
        certify(net, many, 0.5, 0.05, "diagonal", NO_MC)


@pytest.mark.parametrize("kind", ["residual", "circulant", "toeplitz"])
def test_certify_structured_reports(kind, small_nets):
    net, data = small_nets[kind]
    cfg = CertifyConfig(symbol=ToeplitzSymbol.geometric(0.25), mc_samples=0)
    r = certify(net, data, 0.5, 0.05, kind, cfg)
    doc = json.loads(r.to_json())
    assert doc["structure"] == kind
    assert set(doc) >= {"empirical_margin_loss", "beta_hat", "sigma2", "kl", "complexity", "final_bound",
                        "asymptotic_delta_factor", "trivial_flag", "mc_diagnostics"}
    md = r.to_markdown()
    assert md.startswith(f"## Certificate: {kind}") and "final_bound" in md
    if kind == "toeplitz":
        ext = symbol_extrema(cfg.symbol)
        assert r.diagnostics["psi_max"] / r.diagnostics["psi_min"] == pytest.approx(ext.psi_max / ext.psi_min)
    if kind == "circulant":
        assert "complexity_literal_gain" in r.diagnostics


def test_comparison_markdown(small_nets):
    net, data = small_nets["dense"]
    reps = [certify(net, data, 0.5, 0.05, s, NO_MC) for s in ("diagonal", "lowrank")]
    table = comparison_markdown(reps)
    lines = table.strip().splitlines()
    assert len(lines) == 4
    assert "d^2 h^2 Phi" in lines[2] and "d^2 K Phi" in lines[3]


def test_spectral_normalization_keeps_delta_factors(small_nets):
    rng = np.random.default_rng(5)
    for kind, structures in (("dense", ("diagonal", "lowrank")), ("residual", ("residual",)),
                             ("circulant", ("circulant",)), ("toeplitz", ("toeplitz",))):
        net, _ = small_nets[kind]
        net = net.with_weights([L.weight * rng.uniform(0.5, 2.0) for L in net.layers])
        norm, _ = spectral_normalize(net)
        for s in structures:
            assert delta_factor(norm, s) == pytest.approx(delta_factor(net, s), rel=1e-9)

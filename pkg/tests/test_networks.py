import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pacb import linalg
from pacb.networks import (
    Dataset,
    Layer,
    Network,
    empirical_margin_loss,
    forward,
    layer_jacobian,
    margin,
    margins,
    perturb,
    spectral_normalize,
    split_params,
)
from pacb.verify import finite_diff_jacobian

from conftest import dense_net, random_data


def _loop_forward(net, x):
    # straight-line interpreter: explicit loops, no matrix products
    def matvec(W, a):
        return np.array([sum(W[i, j] * a[j] for j in range(len(a))) for i in range(W.shape[0])])

    relu = lambda v: np.array([max(t, 0.0) for t in v])  # noqa: E731
    mats = net.matrices()
    if net.kind == "residual":
        F = np.array(x, dtype=float)
        for W in mats[:-1]:
            F = matvec(W, relu(F)) + F
        out = matvec(mats[-1], relu(F))
    else:
        a = np.array(x, dtype=float)
        for W in mats[:-1]:
            a = relu(matvec(W, a))
        out = matvec(mats[-1], a)
    return out[: net.output_dim]


def test_forward_identity_example():
    net = Network("dense", [Layer("dense", np.eye(2)), Layer("dense", np.eye(2))], 2, 2)
    assert np.array_equal(forward(net, [1.0, -1.0]), [1.0, 0.0])


def test_forward_zero_weights():
    net = Network("dense", [Layer("dense", np.zeros((3, 2))), Layer("dense", np.zeros((2, 3)))], 2, 2)
    assert np.array_equal(forward(net, [3.0, 4.0]), [0.0, 0.0])


@pytest.mark.parametrize("kind", ["dense", "residual", "circulant", "toeplitz"])
def test_forward_matches_loop_interpreter(kind, small_nets):
    net, data = small_nets[kind]
    rng = np.random.default_rng(1)
    net = net.with_weights([L.weight + 0.3 * rng.standard_normal(L.weight.shape) for L in net.layers])
    for x in data.inputs[:5]:
        assert np.allclose(forward(net, x), _loop_forward(net, x), rtol=1e-12, atol=1e-12)
    batch = forward(net, data.inputs[:5])
    assert np.allclose(batch, [forward(net, x) for x in data.inputs[:5]], rtol=0, atol=1e-14)


def test_forward_dimension_mismatch():
    net = dense_net([3, 4, 2])
    with pytest.raises(ValueError):
        forward(net, np.ones(4))


def test_network_validation():
    with pytest.raises(ValueError):
        Network("dense", [Layer("dense", np.eye(2))], 2, 2)
    with pytest.raises(ValueError):
        Network("dense", [Layer("dense", np.eye(2)), Layer("residual", np.eye(2))], 2, 2)
    with pytest.raises(ValueError):
        Network("dense", [Layer("dense", np.ones((3, 2))), Layer("dense", np.ones((2, 2)))], 2, 2)
    with pytest.raises(ValueError):
        Layer("dense", [[np.inf]])
    with pytest.raises(ValueError):
        Layer("circulant", [1.0, 2.0], size=3)
    with pytest.raises(ValueError):
        Layer("toeplitz", [1.0, 2.0, 3.0], size=2)
    with pytest.raises(ValueError):
        Layer("conv", [[1.0]])


def test_margin_examples():
    assert margin([2, 1], 1) == 1.0
    assert margin([0, 0, 0], 2) == 0.0
    assert margin([-1, 4, 2], 3) == -2.0
    with pytest.raises(ValueError):
        margin([1.0], 1)


def test_empirical_margin_loss_count():
    # a 2-class linear readout where margin(x) = x1 - x2
    net = Network("dense", [Layer("dense", np.eye(2)), Layer("dense", np.eye(2))], 2, 2)
    X = np.array([[0.0, 1.0], [0.5, 0.0], [2.0, 0.0], [3.0, 0.0]])
    data = Dataset.from_arrays(X, np.ones(4, dtype=int))
    assert np.allclose(margins(net, data), [-1, 0.5, 2, 3])
    assert empirical_margin_loss(net, data, 1.0) == 0.5
    assert empirical_margin_loss(net, data, 1e9) == 1.0
    sep = Dataset.from_arrays(X[2:] + [3.0, 0.0], np.ones(2, dtype=int))
    assert empirical_margin_loss(net, sep, 1.0) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 3), st.floats(0, 3), st.integers(0, 10**6))
def test_margin_loss_monotone_in_gamma(g1, g2, seed):
    net = dense_net([3, 5, 3], seed=seed % 97)
    data = random_data(3, m=30, K=3, seed=seed)
    lo, hi = sorted((g1, g2))
    assert empirical_margin_loss(net, data, lo) <= empirical_margin_loss(net, data, hi)


def test_perturb_basics(small_nets):
    net, data = small_nets["dense"]
    zero = [np.zeros(L.weight.shape) for L in net.layers]
    assert np.array_equal(forward(perturb(net, zero), data.inputs), forward(net, data.inputs))
    neg = [-L.weight for L in net.layers]
    assert np.all(forward(perturb(net, neg), data.inputs) == 0)
    before = net.layers[0].weight.copy()
    perturb(net, [np.ones(L.weight.shape) for L in net.layers])
    assert np.array_equal(net.layers[0].weight, before)
    with pytest.raises(ValueError):
        perturb(net, zero[:-1])
    with pytest.raises(ValueError):
        perturb(net, [np.zeros(1)] * net.depth)


def test_perturb_circulant_kernel_space(small_nets):
    net, _ = small_nets["circulant"]
    rng = np.random.default_rng(0)
    u = [rng.standard_normal(L.n_params) for L in net.layers]
    moved = perturb(net, u)
    for L, M, ul in zip(net.layers, moved.layers, u):
        assert np.allclose(M.matrix, L.matrix + linalg.circulant_from_kernel(ul), atol=1e-14)


def test_split_params_roundtrip(small_nets):
    net, _ = small_nets["dense"]
    parts = split_params(net, net.param_vector())
    assert all(np.array_equal(p, L.weight) for p, L in zip(parts, net.layers))
    with pytest.raises(ValueError):
        split_params(net, np.zeros(3))


def test_jacobian_linear_regime():
    rng = np.random.default_rng(0)
    W1 = np.abs(rng.standard_normal((3, 2))) + 0.1
    net = Network("dense", [Layer("dense", W1), Layer("dense", np.eye(3))], 2, 3)
    x = np.array([0.7, 1.3])
    assert np.allclose(layer_jacobian(net, x, 0), np.kron(np.eye(3), x[None, :]))


def test_jacobian_dead_relu():
    net = Network("dense", [Layer("dense", -np.ones((3, 2))), Layer("dense", np.ones((2, 3)))], 2, 2)
    assert np.array_equal(layer_jacobian(net, np.array([1.0, 2.0]), 0), np.zeros((2, 6)))


def test_jacobian_vs_finite_differences():
    rng = np.random.default_rng(3)
    checked = 0
    for t in range(30):
        net = dense_net([4, 6, 5, 3], seed=t)
        x = rng.standard_normal(4)
        pre = [net.matrices()[0] @ x]
        pre.append(net.matrices()[1] @ np.maximum(pre[0], 0))
        if min(np.abs(p).min() for p in pre) < 1e-3:
            continue
        for l in range(3):
            J = layer_jacobian(net, x, l)
            F = finite_diff_jacobian(net, x, l, 1e-5)
            assert np.linalg.norm(J - F) <= 1e-4 * max(np.linalg.norm(F), 1e-12)
        checked += 1
    assert checked >= 10


def test_jacobian_errors(small_nets):
    with pytest.raises(ValueError):
        layer_jacobian(small_nets["circulant"][0], np.ones(8), 0)
    net = dense_net([3, 4, 2])
    with pytest.raises(IndexError):
        layer_jacobian(net, np.ones(3), 2)


def test_jacobian_spectral_bound_random():
    rng = np.random.default_rng(7)
    for t in range(200):
        dims = [int(v) for v in rng.integers(2, 6, size=int(rng.integers(3, 5)))]
        net = dense_net(dims, seed=t)
        x = rng.standard_normal(dims[0])
        norms = net.spectral_norms()
        for l in range(net.depth):
            J = layer_jacobian(net, x, l)
            bound = np.linalg.norm(x) * np.prod(np.delete(norms, l))
            assert np.linalg.norm(J, 2) <= bound * (1 + 1e-9) + 1e-9


def test_homogeneity():
    rng = np.random.default_rng(11)
    for t in range(100):
        net = dense_net([3, 4, 4, 2], seed=t)
        x = rng.standard_normal(3)
        l = int(rng.integers(0, 3))
        c = float(rng.uniform(0.1, 5))
        scaled = net.with_weights([c * L.weight if i == l else L.weight for i, L in enumerate(net.layers)])
        assert np.allclose(forward(scaled, x), c * forward(net, x), rtol=1e-12, atol=1e-12)
        if l == net.depth - 1:
            assert margin(forward(scaled, x), 1) == pytest.approx(c * margin(forward(net, x), 1), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("kind", ["dense", "circulant", "toeplitz"])
def test_spectral_normalize_preserves_function(kind, small_nets):
    net, data = small_nets[kind]
    rng = np.random.default_rng(2)
    net = net.with_weights([L.weight * rng.uniform(0.3, 3) for L in net.layers])
    norm, beta = spectral_normalize(net)
    assert np.allclose(norm.spectral_norms(), beta, rtol=1e-9)
    assert beta == pytest.approx(np.prod(net.spectral_norms()) ** (1 / net.depth), rel=1e-12)
    a, b = forward(net, data.inputs), forward(norm, data.inputs)
    assert np.max(np.abs(a - b)) <= 1e-9 * np.max(np.abs(a))


def test_spectral_normalize_residual_unchanged(small_nets):
    net, _ = small_nets["residual"]
    out, beta = spectral_normalize(net)
    assert out is net
    assert beta == pytest.approx(net.spectral_norms().max())


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.ones((2, 2)), [1, 2, 3], 10.0)
    with pytest.raises(ValueError):
        Dataset(np.ones((2, 2)), [0, 1], 10.0)
    with pytest.raises(ValueError):
        Dataset(np.full((1, 2), 3.0), [1], 1.0)
    d = Dataset.from_arrays(np.array([[3.0, 4.0], [0.0, 1.0]]), [1, 2])
    assert d.radius_B == 5.0 and d.size == 2 and d.dim == 2
    with pytest.raises(ValueError):
        d.check_classes(1)

import numpy as np
import pytest

from pacb import kernels
from pacb.cli import generate_blobs, generate_network
from pacb.networks import Dataset, Layer, Network


@pytest.fixture(params=sorted(kernels.backends()))
def backend(request):
    """Each available kernel backend, patched into ``pacb.kernels``."""
    mod = kernels.backends()[request.param]
    mp = pytest.MonkeyPatch()
    for name in ("power_iteration", "symbol_abs", "golden_extremum", "banded_toeplitz_matvec"):
        mp.setattr(kernels, name, getattr(mod, name))
    yield request.param
    mp.undo()


def dense_net(dims, seed=0, kind="dense"):
    rng = np.random.default_rng(seed)
    layers = [Layer(kind, rng.standard_normal((dims[i + 1], dims[i])) / np.sqrt(dims[i])) for i in range(len(dims) - 1)]
    return Network(kind, layers, dims[0], dims[-1])


def random_data(n, m=20, K=2, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((m, n))
    y = rng.integers(1, K + 1, size=m)
    return Dataset.from_arrays(X, y)


@pytest.fixture(scope="session")
def small_nets():
    """One aligned network per kind with matching blob data."""
    out = {}
    for kind, k in (("dense", 3), ("residual", 3), ("circulant", 3), ("toeplitz", 3)):
        net = generate_network(kind, 3, 8, 2, k=k, init="aligned", seed=3)
        out[kind] = (net, generate_blobs(200, 8, seed=3))
    return out


_CRITERIA: dict = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    _CRITERIA[number] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")

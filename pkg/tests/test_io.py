import numpy as np
import pytest

from pacb import io
from pacb.networks import Dataset, forward

from conftest import dense_net


@pytest.mark.parametrize("kind", ["dense", "residual", "circulant", "toeplitz"])
def test_network_roundtrip_is_canonical(kind, small_nets):
    net, data = small_nets[kind]
    text = io.dumps_network(net)
    again = io.loads_network(text)
    assert io.dumps_network(again) == text
    assert np.array_equal(forward(again, data.inputs), forward(net, data.inputs))


def test_network_file_roundtrip(tmp_path):
    net = dense_net([3, 4, 2], seed=5)
    path = tmp_path / "net.json"
    io.save_network(net, path)
    assert io.load_network(path).param_vector().tolist() == net.param_vector().tolist()


def test_network_parse_errors():
    with pytest.raises(io.FormatError):
        io.loads_network("{not json")
    with pytest.raises(io.FormatError):
        io.loads_network('{"kind": "dense"}')
    with pytest.raises(ValueError):
        io.loads_network('{"kind": "dense", "input_dim": 2, "output_dim": 2, "layers": [{"weight": [[1, 0]]}]}')


def test_dataset_roundtrip():
    rng = np.random.default_rng(0)
    data = Dataset.from_arrays(rng.standard_normal((15, 3)), rng.integers(1, 4, size=15))
    text = io.dumps_dataset(data)
    assert text.splitlines()[0] == "label,x1,x2,x3"
    again = io.loads_dataset(text)
    assert io.dumps_dataset(again) == text
    assert np.array_equal(again.inputs, data.inputs)
    assert np.array_equal(again.labels, data.labels)
    assert again.radius_B == data.radius_B


def test_dataset_radius_override():
    text = "label,x1,x2\n1,3.0,4.0\n"
    assert io.loads_dataset(text).radius_B == 5.0
    assert io.loads_dataset(text, radius_B=7.5).radius_B == 7.5
    with pytest.raises(ValueError):
        io.loads_dataset(text, radius_B=1.0)


@pytest.mark.parametrize(
    "text",
    ["", "y,x1\n1,2\n", "label,x2\n1,2\n", "label,x1\n1,2,3\n", "label,x1\none,2\n", "label,x1\n1,abc\n"],
)
def test_dataset_parse_errors(text):
    with pytest.raises(io.FormatError):
        io.loads_dataset(text)

"""Network JSON and dataset CSV formats.

Network::

    {"kind": "dense", "input_dim": n, "output_dim": K,
     "layers": [{"weight": [[...], ...]}, ...]}

Circulant/Toeplitz layers are written as ``{"kernel": [...], "size": h}``.

Dataset: CSV with header ``label,x1,...,xn`` and 1-based integer labels.

Writers use a canonical layout (fixed key order, two-space indent, shortest
round-trip float repr), so parse -> write reproduces a canonical file byte for
byte.
"""
from __future__ import annotations

import csv
import io as _io
import json
from pathlib import Path

import numpy as np

from .networks import Dataset, Layer, Network


class FormatError(ValueError):
    pass


def network_to_dict(net: Network) -> dict:
    layers = []
    for L in net.layers:
        if L.kind in ("circulant", "toeplitz"):
            layers.append({"kernel": [float(v) for v in L.weight], "size": int(L.size)})
        else:
            layers.append({"weight": [[float(v) for v in row] for row in L.weight]})
    return {"kind": net.kind, "input_dim": net.input_dim, "output_dim": net.output_dim, "layers": layers}


def network_from_dict(doc: dict) -> Network:
    try:
        kind = doc["kind"]
        layers = []
        for spec in doc["layers"]:
            if "kernel" in spec:
                layers.append(Layer(kind, spec["kernel"], spec.get("size")))
            else:
                layers.append(Layer(kind, spec["weight"]))
        return Network(kind, layers, int(doc["input_dim"]), int(doc["output_dim"]))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed network document: {exc!r}") from exc


def dumps_network(net: Network) -> str:
    return json.dumps(network_to_dict(net), indent=2) + "\n"


def loads_network(text: str) -> Network:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"network file is not valid JSON: {exc}") from exc
    return network_from_dict(doc)


def load_network(path) -> Network:
    return loads_network(Path(path).read_text())


def save_network(net: Network, path) -> None:
    Path(path).write_text(dumps_network(net))


def dumps_dataset(data: Dataset) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label"] + [f"x{i + 1}" for i in range(data.dim)])
    for y, x in zip(data.labels, data.inputs):
        w.writerow([int(y)] + [repr(float(v)) for v in x])
    return buf.getvalue()


def loads_dataset(text: str, radius_B: float | None = None) -> Dataset:
    rows = list(csv.reader(_io.StringIO(text)))
    if not rows:
        raise FormatError("dataset file is empty")
    header = [h.strip() for h in rows[0]]
    n = len(header) - 1
    if n < 1 or header != ["label"] + [f"x{i + 1}" for i in range(n)]:
        raise FormatError("dataset header must be label,x1,...,xn")
    labels, inputs = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != n + 1:
            raise FormatError(f"line {lineno}: expected {n + 1} fields, got {len(row)}")
        try:
            labels.append(int(row[0]))
            inputs.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from exc
    X = np.array(inputs, dtype=np.float64).reshape(len(inputs), n)
    return Dataset.from_arrays(X, np.array(labels, dtype=np.int64), radius_B)


def load_dataset(path, radius_B: float | None = None) -> Dataset:
    return loads_dataset(Path(path).read_text(), radius_B)


def save_dataset(data: Dataset, path) -> None:
    Path(path).write_text(dumps_dataset(data))

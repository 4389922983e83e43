"""Bias-free ReLU networks: dense, residual, circulant and Toeplitz layers.

Layer indices are 0-based.  Class labels are 1-based (``1..K``), matching the
dataset file format.

Circulant and Toeplitz layers are square ``h x h``.  When such a network has
``output_dim K < h``, its output is the first ``K`` coordinates of the last
layer (a fixed, parameter-free readout).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import linalg

KINDS = ("dense", "residual", "circulant", "toeplitz")


@dataclass(frozen=True, eq=False)
class Layer:
    kind: str
    weight: np.ndarray  # matrix for dense/residual, kernel vector for circulant/toeplitz
    size: int | None = None  # expanded h for circulant/toeplitz

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        w = np.array(self.weight, dtype=np.float64)
        if not np.all(np.isfinite(w)):
            raise ValueError("layer weights must be finite")
        if self.kind in ("dense", "residual"):
            if w.ndim != 2 or w.size == 0:
                raise ValueError(f"{self.kind} layer needs a 2-D weight matrix")
        else:
            w = w.ravel()
            size = self.size if self.size is not None else w.size
            if self.kind == "circulant" and w.size != size:
                raise ValueError("circulant kernel length must equal the layer size")
            if w.size > size:
                raise ValueError("toeplitz kernel longer than the layer size")
            object.__setattr__(self, "size", int(size))
        w.setflags(write=False)
        object.__setattr__(self, "weight", w)

    @cached_property
    def matrix(self) -> np.ndarray:
        if self.kind == "circulant":
            M = linalg.circulant_from_kernel(self.weight)
        elif self.kind == "toeplitz":
            M = linalg.toeplitz_from_kernel(self.weight, self.size)
        else:
            M = np.array(self.weight)
        M.setflags(write=False)
        return M

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def n_params(self) -> int:
        return int(self.weight.size)

    @cached_property
    def spectral_norm(self) -> float:
        if self.kind == "circulant":
            return linalg.circulant_gains(self.weight)[1]
        return linalg.spectral_norm(self.matrix)

    def scaled(self, c: float) -> "Layer":
        return Layer(self.kind, c * self.weight, self.size)


@dataclass(frozen=True, eq=False)
class Network:
    kind: str
    layers: tuple[Layer, ...]
    input_dim: int
    output_dim: int
    notes: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.kind not in KINDS:
            raise ValueError(f"unknown network kind {self.kind!r}")
        if len(self.layers) < 2:
            raise ValueError("a network needs at least 2 layers")
        if any(L.kind != self.kind for L in self.layers):
            raise ValueError("mixed layer kinds are not supported")
        prev = self.input_dim
        d = len(self.layers)
        for i, L in enumerate(self.layers):
            rows, cols = L.shape
            if cols != prev:
                raise ValueError(f"layer {i} expects input dim {cols}, got {prev}")
            if self.kind == "residual" and i < d - 1 and rows != cols:
                raise ValueError(f"residual layer {i} must be square, got {L.shape}")
            prev = rows
        if self.kind in ("dense", "residual"):
            if prev != self.output_dim:
                raise ValueError(f"last layer outputs {prev}, network declares {self.output_dim}")
        elif not 1 <= self.output_dim <= prev:
            raise ValueError(f"output_dim {self.output_dim} must be in 1..{prev}")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def width(self) -> int:
        return max(max(L.shape) for L in self.layers)

    def matrices(self) -> list[np.ndarray]:
        return [L.matrix for L in self.layers]

    def spectral_norms(self) -> np.ndarray:
        return np.array([L.spectral_norm for L in self.layers])

    def param_vector(self) -> np.ndarray:
        """Concatenation of the parameters actually perturbed (kernels for shared weights)."""
        return np.concatenate([L.weight.ravel() for L in self.layers])

    def param_sq_norm(self) -> float:
        w = self.param_vector()
        return float(w @ w)

    def with_weights(self, weights) -> "Network":
        layers = [Layer(L.kind, w, L.size) for L, w in zip(self.layers, weights)]
        return Network(self.kind, layers, self.input_dim, self.output_dim, dict(self.notes))


def forward(net: Network, x) -> np.ndarray:
    """Network output for one input (1-D) or a batch of inputs (rows)."""
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ValueError(f"input dimension {X.shape[-1]} does not match network input {net.input_dim}")
    mats = net.matrices()
    d = len(mats)
    if net.kind == "residual":
        F = X
        for W in mats[:-1]:
            F = np.maximum(F, 0.0) @ W.T + F
        Y = np.maximum(F, 0.0) @ mats[-1].T
    else:
        A = X
        for W in mats[:-1]:
            A = np.maximum(A @ W.T, 0.0)
        Y = A @ mats[d - 1].T
    Y = Y[:, : net.output_dim]
    return Y[0] if single else Y


def margin(logits, y: int) -> float:
    """``f[y] - max_{j != y} f[j]`` for a 1-based label ``y``."""
    f = np.asarray(logits, dtype=np.float64)
    if f.size < 2:
        raise ValueError("margin needs at least 2 classes")
    i = int(y) - 1
    others = np.delete(f, i)
    return float(f[i] - others.max())


def margins(net: Network, data: "Dataset") -> np.ndarray:
    Y = forward(net, data.inputs)
    idx = data.labels - 1
    true = Y[np.arange(len(idx)), idx]
    masked = Y.copy()
    masked[np.arange(len(idx)), idx] = -np.inf
    return true - masked.max(axis=1)


def empirical_margin_loss(net: Network, data: "Dataset", gamma: float) -> float:
    if data.size == 0:
        raise ValueError("empty dataset")
    return float(np.mean(margins(net, data) <= gamma))


def perturb(net: Network, u) -> Network:
    """Network with every layer's parameters shifted by the matching entry of ``u``.

    ``u`` is a sequence with one array per layer, shaped like the layer
    parameters (or flat with the same number of entries).
    """
    if len(u) != net.depth:
        raise ValueError(f"expected {net.depth} per-layer perturbations, got {len(u)}")
    new = []
    for L, ul in zip(net.layers, u):
        ul = np.asarray(ul, dtype=np.float64)
        if ul.size != L.weight.size:
            raise ValueError(f"perturbation size {ul.size} does not match layer parameters {L.weight.size}")
        new.append(L.weight + ul.reshape(L.weight.shape))
    return net.with_weights(new)


def split_params(net: Network, flat) -> list[np.ndarray]:
    """Split a flat parameter vector into per-layer arrays."""
    flat = np.asarray(flat, dtype=np.float64)
    out, start = [], 0
    for L in net.layers:
        out.append(flat[start : start + L.weight.size].reshape(L.weight.shape))
        start += L.weight.size
    if start != flat.size:
        raise ValueError("flat parameter vector has the wrong length")
    return out


def layer_jacobian(net: Network, x, l: int) -> np.ndarray:
    """Analytic ``d f(x) / d vec(W_l)`` (row-major vec), shape ``K x (h_l * h_{l-1})``.

    ReLU derivative at 0 is taken as 0.  Dense networks only.
    """
    if net.kind != "dense":
        raise ValueError("layer_jacobian supports dense networks only")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.input_dim,):
        raise ValueError("input dimension mismatch")
    mats = net.matrices()
    d = len(mats)
    if not 0 <= l < d:
        raise IndexError(f"layer index {l} out of range")
    acts = [x]
    masks = []
    a = x
    for W in mats[:-1]:
        z = W @ a
        masks.append((z > 0).astype(np.float64))
        a = np.maximum(z, 0.0)
        acts.append(a)
    G = np.eye(net.output_dim)
    for i in range(d - 1, l, -1):
        G = (G @ mats[i]) * masks[i - 1][None, :]
    return np.kron(G, acts[l][None, :])


def spectral_normalize(net: Network) -> tuple[Network, float]:
    """Rescale layers so all share ``beta = (prod ||W_l||_2)^(1/d)``.

    Function-preserving by ReLU homogeneity.  Residual networks are returned
    unchanged (skip connections are not homogeneous), with ``beta`` the
    largest layer norm.
    """
    norms = net.spectral_norms()
    if net.kind == "residual":
        return net, float(norms.max())
    if np.any(norms <= 0):
        raise ValueError("cannot normalize a network with a zero layer")
    beta = float(np.exp(np.mean(np.log(norms))))
    layers = [L.scaled(beta / s) for L, s in zip(net.layers, norms)]
    out = Network(net.kind, layers, net.input_dim, net.output_dim, dict(net.notes))
    return out, beta


@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    radius_B: float

    def __post_init__(self):
        X = np.array(self.inputs, dtype=np.float64)
        y = np.array(self.labels, dtype=np.int64).ravel()
        if X.ndim != 2:
            raise ValueError("inputs must be a 2-D array (one row per sample)")
        if X.shape[0] != y.size:
            raise ValueError("inputs and labels differ in length")
        if y.size and y.min() < 1:
            raise ValueError("labels are 1-based")
        norms = np.linalg.norm(X, axis=1) if X.size else np.zeros(0)
        if norms.size and norms.max() > self.radius_B * (1 + 1e-12):
            raise ValueError(f"input norm {norms.max()} exceeds radius B={self.radius_B}")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "radius_B", float(self.radius_B))

    @classmethod
    def from_arrays(cls, inputs, labels, radius_B: float | None = None) -> "Dataset":
        X = np.asarray(inputs, dtype=np.float64)
        if radius_B is None:
            radius_B = float(np.linalg.norm(X, axis=1).max())
        return cls(X, labels, radius_B)

    @property
    def size(self) -> int:
        return int(self.labels.size)

    @property
    def dim(self) -> int:
        return int(self.inputs.shape[1])

    def check_classes(self, K: int) -> None:
        if self.labels.size and self.labels.max() > K:
            raise ValueError(f"label {self.labels.max()} exceeds number of classes {K}")

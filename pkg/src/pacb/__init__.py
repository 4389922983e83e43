"""PAC-Bayesian certificates for small ReLU networks with structured,
sensitivity-aware Gaussian posteriors."""
from .bounds import BoundReport, CertifyConfig, certify, complexity, delta_factor
from .kernels import BACKEND
from .networks import Dataset, Layer, Network, forward, spectral_normalize
from .sensitivity import ToeplitzSymbol

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BoundReport",
    "CertifyConfig",
    "Dataset",
    "Layer",
    "Network",
    "ToeplitzSymbol",
    "certify",
    "complexity",
    "delta_factor",
    "forward",
    "spectral_normalize",
]

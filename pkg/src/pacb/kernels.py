"""Backend selection for the hot kernels.

The compiled extension ``pacb._core`` is used when it was built; otherwise the
numpy implementation in ``pacb._pycore`` is used.  Setting the environment
variable ``PACB_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _pycore

BACKEND = "python"
_impl = _pycore

if os.environ.get("PACB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pycore

power_iteration = _impl.power_iteration
symbol_abs = _impl.symbol_abs
golden_extremum = _impl.golden_extremum
banded_toeplitz_matvec = _impl.banded_toeplitz_matvec


def backends():
    """Map of backend name -> kernel module for every backend importable here."""
    out = {"python": _pycore}
    try:
        from . import _core

        out["cython"] = _core
    except ImportError:
        pass
    return out

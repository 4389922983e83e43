"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the best-of-N time for each backend and the
speedup.  Both backends must be importable for a comparison; otherwise only
the available one is timed.
"""
import argparse
import math
import timeit

import numpy as np

from pacb import kernels
from pacb.linalg import toeplitz_from_kernel


def cases():
    rng = np.random.default_rng(0)
    dense = rng.standard_normal((64, 64))
    banded = toeplitz_from_kernel(rng.standard_normal(5), 64)
    t = np.array([1.0, 0.6, -0.3, 0.1])
    omega = np.linspace(0.0, 2 * math.pi, 8192, endpoint=False)
    x = rng.standard_normal(4096)
    return {
        "power_iteration 64x64": lambda k: k.power_iteration(dense, 1e-10, 1000, 1),
        "power_iteration banded 64x64": lambda k: k.power_iteration(banded, 1e-10, 1000, 1),
        "symbol_abs 8192 points": lambda k: k.symbol_abs(t, omega),
        "golden_extremum": lambda k: k.golden_extremum(t, 0.0, 1.0, 1e-10, True),
        "banded_toeplitz_matvec n=4096": lambda k: k.banded_toeplitz_matvec(t, x),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    args = ap.parse_args()
    impls = kernels.backends()
    names = sorted(impls)
    print(f"{'kernel':32s}" + "".join(f"{n + ' (ms)':>14s}" for n in names) + ("     speedup" if len(names) == 2 else ""))
    for label, fn in cases().items():
        times = {}
        for n in names:
            mod = impls[n]
            best = min(timeit.repeat(lambda: fn(mod), number=args.number, repeat=args.repeat))
            times[n] = 1e3 * best / args.number
        row = f"{label:32s}" + "".join(f"{times[n]:14.4f}" for n in names)
        if len(names) == 2:
            row += f"{times['python'] / times['cython']:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()

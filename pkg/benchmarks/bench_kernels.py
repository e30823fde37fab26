"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]
"""
import argparse
import itertools
import timeit

import numpy as np

from pass_opt import _kernels_py
from pass_opt._accel import COMPILED

try:
    from pass_opt import _kernels
except ImportError:
    _kernels = None


def workloads(rng):
    L = 12
    flags = rng.integers(0, 2, size=L).astype(np.int8)
    kd = rng.uniform(0.05, 1.5, size=L)
    N, Lp = 2, 6
    coef = rng.normal(size=(N, Lp)) + 1j * rng.normal(size=(N, Lp))
    rows = np.array(list(itertools.product((0, 1), repeat=Lp))[1:], dtype=np.int8)
    idx = np.array(list(itertools.product(range(len(rows)), repeat=N)))
    pats = rows[idx]  # every pattern with nonempty waveguides, (3969, 2, 6)
    return {
        "radiation_ratios (L=12)": lambda k: k.radiation_ratios(flags, kd),
        f"pattern_gains ({len(pats)} patterns)": lambda k: k.pattern_gains(coef, pats),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"compiled extension available: {COMPILED}")
    print(f"{'kernel':32s} {'numpy (us)':>12s} {'cython (us)':>12s} {'speedup':>8s}")
    for name, fn in workloads(rng).items():
        number = 200
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=number, repeat=args.repeat)) / number
        if _kernels is not None:
            np.testing.assert_allclose(fn(_kernels), fn(_kernels_py), rtol=1e-12, atol=1e-14)
            t_cy = min(timeit.repeat(lambda: fn(_kernels), number=number, repeat=args.repeat)) / number
            print(f"{name:32s} {t_py * 1e6:12.2f} {t_cy * 1e6:12.2f} {t_py / t_cy:8.1f}")
        else:
            print(f"{name:32s} {t_py * 1e6:12.2f} {'-':>12s} {'-':>8s}")


if __name__ == "__main__":
    main()

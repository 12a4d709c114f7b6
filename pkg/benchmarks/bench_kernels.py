"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--sizes 32 128 512] [--repeat 5]

Each row reports the best-of-``repeat`` wall time per backend, the speedup
and the largest disagreement between the two results.
"""
import argparse
import timeit

import numpy as np

from novalley import _backend, linalg


def cases(n, rng):
    a = rng.standard_normal((n, n))
    tall = rng.standard_normal((2 * n, n))
    b = rng.standard_normal((2 * n, 4))
    return {
        "householder_qr": lambda nm: _backend.get(nm).householder_qr(tall, True)[0],
        "lu_det": lambda nm: np.array([_backend.get(nm).lu_det(a / np.sqrt(n))]),
        "least_squares": lambda nm: linalg.solve_least_squares(tall, b, backend=nm).solution,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 128, 384])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    names = _backend.available()
    if "cython" not in names:
        print("compiled extension not built; only the numpy fallback is available")
    print(f"{'kernel':<16}{'n':>6}" + "".join(f"{nm + ' [ms]':>16}" for nm in names)
          + f"{'speedup':>10}{'max diff':>12}")
    rng = np.random.default_rng(0)
    for n in args.sizes:
        for label, fn in cases(n, rng).items():
            times, outs = [], []
            for nm in names:
                outs.append(fn(nm))
                times.append(min(timeit.repeat(lambda: fn(nm), number=1, repeat=args.repeat)) * 1e3)
            speed = f"{times[0] / times[1]:.1f}x" if len(times) > 1 else "-"
            diff = f"{np.max(np.abs(outs[0] - outs[1])):.1e}" if len(outs) > 1 else "-"
            print(f"{label:<16}{n:>6}" + "".join(f"{t:>16.2f}" for t in times) + f"{speed:>10}{diff:>12}")


if __name__ == "__main__":
    main()

"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_backends.py [--repeat 5]

Prints one line per kernel with the best time of each backend, the speedup
and the largest absolute difference between the two outputs.
"""
import argparse
import timeit

import numpy as np

from mfsbm import _backend
from mfsbm.moments import triple_structure


def chain_case(rng):
    parents, _, _ = triple_structure(5, 3)
    m = 4096
    times = np.empty((m, 4))
    times[:, 0] = 1.0
    times[:, 1:] = -np.sort(-rng.random((m, 3)), axis=1)
    normals = rng.standard_normal((m, 3))
    return lambda b: _backend.chain_weights(parents, times, 0.3, normals, backend=b)


def segments_case(rng):
    m = 1_000_000
    args = (rng.standard_normal(m), np.full(m, 0.01), np.full(m, 10.0), rng.standard_exponential(m),
            rng.standard_normal(m), rng.random(m))
    return lambda b: _backend.advance_segments(*args, backend=b)


def power_sums_case(rng):
    m, replicas = 400_000, 40_000
    pos = rng.standard_normal(m)
    rep = rng.integers(0, replicas, m)
    points = np.linspace(-6, 6, 64)
    return lambda b: _backend.power_sums(pos, rep, replicas, points, 0.02, 2, backend=b)


def max_difference(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return max(float(np.max(np.abs(np.asarray(x, float) - np.asarray(y, float)))) for x, y in zip(a, b))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if _backend.BACKEND != "compiled":
        print("compiled kernels are not built; only the fallback is available")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':18s} {'compiled':>10s} {'python':>10s} {'speedup':>8s} {'max diff':>10s}")
    for name, case in [("chain_weights", chain_case), ("advance_segments", segments_case),
                       ("power_sums", power_sums_case)]:
        run = case(rng)
        best = {b: min(timeit.repeat(lambda: run(b), number=1, repeat=args.repeat)) for b in ("compiled", "python")}
        diff = max_difference(run("compiled"), run("python"))
        print(f"{name:18s} {best['compiled']:10.4f} {best['python']:10.4f} "
              f"{best['python'] / best['compiled']:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()

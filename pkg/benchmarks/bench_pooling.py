"""Compare the compiled and numpy pooling backends.

Run after installing the package:  python benchmarks/bench_pooling.py
"""

import time

import numpy as np

from semfuse.pooling import available_backends


def bench(kernels, grid, scales, repeats=5):
    out, argmax = kernels.pool_forward(grid, scales)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        out, argmax = kernels.pool_forward(grid, scales)
    fwd = (time.perf_counter() - t0) / repeats
    g = np.ones_like(out)
    kernels.pool_backward(g, argmax, grid.shape[0], scales)
    t0 = time.perf_counter()
    for _ in range(repeats):
        kernels.pool_backward(g, argmax, grid.shape[0], scales)
    bwd = (time.perf_counter() - t0) / repeats
    return fwd, bwd, out


def main():
    backends = available_backends()
    rng = np.random.default_rng(0)
    cases = [(32, 8, 6), (32, 64, 6), (32, 256, 6), (64, 64, 6)]
    print(f"backends available: {', '.join(backends)}")
    print(f"{'case':>16}  {'backend':>8}  {'forward':>10}  {'backward':>10}")
    for n, d, scales in cases:
        grid = np.ascontiguousarray(rng.standard_normal((n, n, d)))
        results = {}
        for name, kernels in backends.items():
            fwd, bwd, out = bench(kernels, grid, scales)
            results[name] = out
            print(f"{f'N={n} D={d} S={scales}':>16}  {name:>8}  {fwd * 1e3:9.3f}ms  {bwd * 1e3:9.3f}ms")
        if len(results) == 2 and not np.array_equal(results["numpy"], results["compiled"]):
            raise AssertionError("backends disagree")
    print("backends agree bit-exactly on all cases")


if __name__ == "__main__":
    main()

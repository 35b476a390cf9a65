"""Compare the compiled Jacobi kernels with the numpy/LAPACK fallback.

Usage: python benchmarks/bench_kernels.py [--batch 20000] [--repeat 5]

Also times one heat A2 characteristic evaluation, the workload the kernels
exist for, under each backend.
"""
import argparse
import time

import numpy as np

from mwlab import backend
from mwlab.heat_ext import heat_a2_characteristic
from mwlab.weight_field import GridSpec, make_family


def random_hpd(rng, batch, d):
    g = rng.normal(size=(batch, d, d)) + 1j * rng.normal(size=(batch, d, d))
    return g @ np.conj(np.swapaxes(g, 1, 2)) + 0.1 * np.eye(d)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--batch", type=int, default=20000)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    rng = np.random.default_rng(0)
    names = backend.available()
    print(f"backends: {', '.join(names)}")
    print(f"{'kernel':<22}{'d':>3}" + "".join(f"{n:>12}" for n in names) + f"{'speedup':>10}")
    for d in (1, 2, 3, 4, 6, 8):
        a, b = random_hpd(rng, args.batch, d), random_hpd(rng, args.batch, d)
        for kernel in ("eigh_batch", "sqrt_product_norm_batch"):
            row = {}
            for n in names:
                fn = getattr(backend.get(n), kernel)
                call = (lambda: fn(a)) if kernel == "eigh_batch" else (lambda: fn(a, b))
                row[n] = best_of(call, args.repeat)
            speed = row["numpy"] / row["cython"] if "cython" in row else float("nan")
            print(f"{kernel:<22}{d:>3}" + "".join(f"{row[n] * 1e3:>10.2f}ms" for n in names) + f"{speed:>9.2f}x")
    w = make_family("random_smooth", [0.4, 3, 3], GridSpec(2, 64, 1.0), 2)
    for n in names:
        backend.use(n)
        t = best_of(lambda: heat_a2_characteristic(w), 1)
        print(f"heat_a2_characteristic (m=2, n=64, d=2) [{n}]: {t:.3f}s")
    backend.use(names[-1])


if __name__ == "__main__":
    main()

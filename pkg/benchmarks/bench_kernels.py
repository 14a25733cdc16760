"""Compare the compiled and numpy k-means kernels.

    python benchmarks/bench_kernels.py [--n 20000] [--k 1000] [--d 16] [--repeat 3]

Reports the best-of-``repeat`` wall time for nearest-centroid assignment and
cluster sums on each available backend, checks that both backends return
identical bits, and prints the speedup.
"""

import argparse
import time

import numpy as np

from semtok.kernels import backends


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20_000)
    ap.add_argument("--k", type=int, default=1000)
    ap.add_argument("--d", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    X = rng.normal(size=(args.n, args.d))
    C = rng.normal(size=(args.k, args.d))
    found = backends()
    print(f"N={args.n} K={args.k} D={args.d}; backends: {', '.join(found)}")

    results = {}
    for name, mod in found.items():
        t_assign, (labels, dists) = best_time(lambda: mod.assign_labels(X, C), args.repeat)
        t_sums, (sums, counts) = best_time(lambda: mod.cluster_sums(X, labels, args.k), args.repeat)
        results[name] = (labels, dists, sums, counts)
        print(f"{name:>7}: assign {t_assign * 1e3:9.1f} ms   cluster_sums {t_sums * 1e3:7.2f} ms")
        results[name + "_t"] = t_assign

    if "cython" in found:
        same = all(
            a.tobytes() == b.tobytes() for a, b in zip(results["python"], results["cython"])
        )
        print(f"bitwise identical: {same}")
        print(f"assign speedup (python / cython): {results['python_t'] / results['cython_t']:.1f}x")


if __name__ == "__main__":
    main()

"""Timing harness for the graph kernels: numba builds vs numpy fallbacks.

Builds an edge workload shaped like a large batch of sentence graphs and
reports the best-of-N wall time for each kernel under both backends.

    python3 benchmarks/bench_kernels.py --edges 200000 --nodes 20000
"""

import argparse
import time

import numpy as np

from simrec.kernels import HAS_NUMBA, NUMBA_IMPLS, NUMPY_IMPLS


def make_workload(n_edges, n_nodes, dim, rng):
    scores = rng.standard_normal(n_edges)
    src = rng.integers(0, n_nodes, n_edges)
    dst = rng.integers(0, n_nodes, n_edges)
    values = rng.standard_normal((n_nodes, dim))
    d_out = rng.standard_normal((n_nodes, dim))
    alpha = NUMPY_IMPLS["segment_softmax"](scores, dst, n_nodes)
    d_alpha = rng.standard_normal(n_edges)
    rows = rng.standard_normal((n_edges, dim))
    vec = rng.standard_normal(n_edges)
    return {
        "segment_softmax": (scores, dst, n_nodes),
        "segment_softmax_grad": (alpha, d_alpha, dst, n_nodes),
        "attention_aggregate": (alpha, values, src, dst, n_nodes),
        "attention_aggregate_grad": (d_out, alpha, values, src, dst),
        "scatter_add_rows": (src, rows, n_nodes, dim),
        "scatter_add_vec": (src, vec, n_nodes),
    }


def best_of(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--edges", type=int, default=200_000)
    parser.add_argument("--nodes", type=int, default=20_000)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    work = make_workload(args.edges, args.nodes, args.dim, rng)
    print(f"edges={args.edges} nodes={args.nodes} dim={args.dim} "
          f"repeats={args.repeats} numba={'yes' if HAS_NUMBA else 'NO'}")

    header = f"{'kernel':<26} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, inputs in work.items():
        t_np = best_of(NUMPY_IMPLS[name], inputs, args.repeats)
        if HAS_NUMBA:
            NUMBA_IMPLS[name](*inputs)  # compile outside the timed region
            t_nb = best_of(NUMBA_IMPLS[name], inputs, args.repeats)
            print(f"{name:<26} {t_np * 1e3:>10.3f} {t_nb * 1e3:>10.3f} "
                  f"{t_np / t_nb:>7.1f}x")
        else:
            print(f"{name:<26} {t_np * 1e3:>10.3f} {'-':>10} {'-':>8}")


if __name__ == "__main__":
    main()

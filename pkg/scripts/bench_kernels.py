"""Benchmark the numba-compiled kernels against their pure-NumPy fallbacks.

The active variant is whatever ``kgchat.kernels`` selected at import time
(controlled by the KGCHAT_NUMBA environment variable), so running this script
twice shows both sides of the comparison:

    python3 scripts/bench_kernels.py
    KGCHAT_NUMBA=0 python3 scripts/bench_kernels.py

With numba active the script also times the uncompiled reference directly, so
a single default run already prints the speedup column.
"""

import argparse
import time

import numpy as np

from kgchat import kernels


def make_workloads(scale, rng):
    """Realistic shapes: training-sized graphs, vocab-width copy scatters."""
    n_ent = 200 * scale
    n_edges = 2000 * scale
    d = 32
    vocab = 1000
    t_steps = 16
    n_src = 40

    workloads = {
        "scatter_add_rows": (
            lambda: (
                np.zeros((n_ent, d)),
                rng.integers(0, n_ent, size=n_edges),
                rng.normal(size=(n_edges, d)),
            )
        ),
        "scatter_add_cols": (
            lambda: (
                rng.random(size=(t_steps, n_src)),
                rng.integers(0, vocab, size=n_src),
                vocab,
            )
        ),
        "segment_sum": (
            lambda: (
                rng.normal(size=n_edges),
                rng.integers(0, n_ent, size=n_edges),
                n_ent,
            )
        ),
        "edge_aggregate": (
            lambda: (
                rng.normal(size=(n_ent, d)),
                rng.integers(0, n_ent, size=n_edges),
                rng.integers(0, n_ent, size=n_edges),
                rng.random(size=n_edges),
                n_ent,
            )
        ),
        "mi_accumulate": (
            lambda: (
                rng.integers(0, n_ent, size=n_edges),
                rng.integers(0, n_ent, size=n_edges),
                rng.integers(1, 20, size=n_edges).astype(np.float64),
                rng.integers(1, 50, size=n_ent).astype(np.float64),
                float(100 * scale),
            )
        ),
        "lcs_length": (
            lambda: (
                rng.integers(0, 50, size=60 * scale),
                rng.integers(0, 50, size=60 * scale),
            )
        ),
    }
    return workloads


def best_of(fn, args_factory, repeats):
    best = float("inf")
    for _ in range(repeats):
        args = args_factory()
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5, help="best-of-N timing")
    parser.add_argument("--scale", type=int, default=1, help="workload size multiplier")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    workloads = make_workloads(args.scale, rng)

    mode = "numba" if kernels.numba_enabled() else "pure NumPy fallback"
    print(f"active kernel variant: {mode}")
    print(f"{'kernel':<18} {'active':>12} {'python':>12} {'speedup':>9}")

    for name, args_factory in workloads.items():
        active = getattr(kernels, name)
        reference = kernels.python_variant(name)

        # Warm-up triggers JIT compilation and page-faults the inputs.
        active(*args_factory())
        reference(*args_factory())

        t_active = best_of(active, args_factory, args.repeats)
        t_python = best_of(reference, args_factory, args.repeats)
        speedup = t_python / t_active if t_active > 0 else float("inf")
        print(
            f"{name:<18} {t_active * 1e3:>10.3f}ms {t_python * 1e3:>10.3f}ms "
            f"{speedup:>8.1f}x"
        )

    if not kernels.numba_enabled():
        print("note: active == python here; unset KGCHAT_NUMBA to benchmark numba")


if __name__ == "__main__":
    main()

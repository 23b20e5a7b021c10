"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Shapes follow a training batch at full width: 32 sentences of 40 tokens,
200-d projections, window 5, 400 filters, vocabulary of 20000.
"""
import argparse
import timeit

import numpy as np

from dan.kernels import available_backends, get_backend


def cases(rng):
    B, L, d, w, F, V = 32, 40, 200, 5, 400, 20000
    T = L - w + 1
    x = rng.standard_normal((B, L, d))
    g_cols = rng.standard_normal((B, T, w * d))
    conv = rng.standard_normal((B, T, F))
    counts = rng.integers(1, T + 1, size=B)
    g_pool = rng.standard_normal((B, F))
    src = rng.standard_normal((B * L, 400))
    index = rng.integers(0, V, size=B * L)
    return {
        "unfold": lambda k: k.unfold(x, w),
        "fold": lambda k: k.fold(g_cols, w, L),
        "max_pool": lambda k: k.max_pool(conv, counts),
        "max_pool_backward": lambda k: k.max_pool_backward(
            g_pool, k.max_pool(conv, counts)[1], T),
        "scatter_add_rows": lambda k: k.scatter_add_rows(src, index, V),
    }


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    backends = {name: get_backend(name) for name in available_backends()}
    fns = cases(np.random.default_rng(0))
    print(f"{'kernel':<20}" + "".join(f"{n + ' ms':>12}" for n in backends) + f"{'speedup':>10}")
    for name, fn in fns.items():
        ms = {b: 1e3 * min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat))
              for b, k in backends.items()}
        speed = ms["python"] / ms["cython"] if "cython" in ms else float("nan")
        print(f"{name:<20}" + "".join(f"{ms[b]:>12.3f}" for b in backends) + f"{speed:>10.2f}x")


if __name__ == "__main__":
    main()

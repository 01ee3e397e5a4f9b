"""Compare the compiled sampling kernels against the numpy fallback.

Usage: python benchmarks/bench_sampling.py [--repeat 5]

Times the two hot paths behind negative generation: exclusion-aware alias
draws (global negative pools) and history membership masks (in-batch
exclusion), at a few batch/corpus scales. Both backends produce identical
outputs; the numbers only differ in wall clock.
"""

import argparse
import time

import numpy as np

from negseq import _kernels
from negseq._kernels import pyref
from negseq.alias import WeightedDraw

try:
    from negseq._kernels import _sampling as compiled
except ImportError:
    compiled = None


def make_case(rng, batch, n_neg, corpus, hist_len):
    weights = np.zeros(corpus + 1)
    weights[1:] = rng.random(corpus) + 0.01
    histories = [np.unique(rng.integers(1, corpus + 1, size=hist_len))
                 .astype(np.int64) for _ in range(batch)]
    items = np.concatenate(histories)
    indptr = np.zeros(batch + 1, dtype=np.int64)
    np.cumsum([len(h) for h in histories], out=indptr[1:])
    return weights, items, indptr


def time_draws(backend, weights, items, indptr, n_neg, repeat):
    _kernels.accept_draws = backend.accept_draws
    wd = WeightedDraw(weights)
    best = float("inf")
    for trial in range(repeat):
        rng = np.random.default_rng(trial)
        start = time.perf_counter()
        wd.draw(n_neg, items, indptr, rng)
        best = min(best, time.perf_counter() - start)
    return best


def time_masks(backend, pool, items, indptr, num_ids, repeat):
    scratch = np.zeros(num_ids, dtype=np.uint8)
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        backend.member_mask(pool, items, indptr, scratch)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    if compiled is None:
        print("compiled extension not built; showing fallback only")
    original = _kernels.accept_draws
    rng = np.random.default_rng(0)

    print(f"{'case':<38}{'python':>12}{'cython':>12}{'speedup':>10}")
    for batch, n_neg, corpus, hist_len in (
            (128, 128, 2_000, 60),
            (128, 1280, 2_000, 60),
            (256, 128, 20_000, 100),
            (512, 256, 50_000, 200)):
        weights, items, indptr = make_case(rng, batch, n_neg, corpus,
                                           hist_len)
        label = (f"draws B={batch} N={n_neg} |I|={corpus} "
                 f"hist={hist_len}")
        t_py = time_draws(pyref, weights, items, indptr, n_neg,
                          args.repeat)
        if compiled is not None:
            t_cy = time_draws(compiled, weights, items, indptr, n_neg,
                              args.repeat)
            print(f"{label:<38}{t_py * 1e3:>10.2f}ms"
                  f"{t_cy * 1e3:>10.2f}ms{t_py / t_cy:>9.1f}x")
        else:
            print(f"{label:<38}{t_py * 1e3:>10.2f}ms{'-':>12}{'-':>10}")
    _kernels.accept_draws = original

    for batch, pool_size, corpus, hist_len in (
            (128, 128, 2_000, 60),
            (256, 512, 20_000, 100),
            (512, 1024, 50_000, 200)):
        _, items, indptr = make_case(rng, batch, pool_size, corpus,
                                     hist_len)
        pool = np.ascontiguousarray(
            rng.integers(1, corpus + 1, size=(batch, pool_size)))
        label = f"masks B={batch} P={pool_size} |I|={corpus}"
        t_py = time_masks(pyref, pool, items, indptr, corpus + 1,
                          args.repeat)
        if compiled is not None:
            t_cy = time_masks(compiled, pool, items, indptr, corpus + 1,
                              args.repeat)
            print(f"{label:<38}{t_py * 1e3:>10.2f}ms"
                  f"{t_cy * 1e3:>10.2f}ms{t_py / t_cy:>9.1f}x")
        else:
            print(f"{label:<38}{t_py * 1e3:>10.2f}ms{'-':>12}{'-':>10}")


if __name__ == "__main__":
    main()

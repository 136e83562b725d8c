"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5] [--scale 1]

Both implementations are called directly, so the env flag does not matter
here. The first numba call is a warm-up (JIT compile or cache load).
"""
import argparse
import time

import numpy as np

from polyvox import kernels


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def cases(scale, rng):
    a = rng.integers(0, 40, 400 * scale)
    b = rng.integers(0, 40, 380 * scale)
    lat = rng.standard_normal((2000 * scale, 32))
    cb = rng.standard_normal((1024, 32))
    allowed = np.sort(rng.choice(1024, 512, replace=False))
    rows = rng.standard_normal((400 * scale, 128))
    n_out = int(round(rows.shape[0] * 24000 / 22050))
    return [
        (f"edit_distance {len(a)}x{len(b)}",
         lambda: kernels.edit_distance_numba(a, b), lambda: kernels.edit_distance_numpy(a, b)),
        (f"nearest_codes {lat.shape[0]}x{cb.shape[0]}",
         lambda: kernels.nearest_codes_numba(lat, cb, allowed),
         lambda: kernels.nearest_codes_numpy(lat, cb, allowed)),
        (f"interp_rows {rows.shape[0]}->{n_out}",
         lambda: kernels.interp_rows_numba(rows, n_out), lambda: kernels.interp_rows_numpy(rows, n_out)),
    ]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=int, default=1)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    if not kernels.HAVE_NUMBA:
        print("numba not installed; numba columns time the uncompiled python loops")
    print(f"{'kernel':<32}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for name, fast, ref in cases(args.scale, rng):
        fast()  # warm-up
        t_fast = best_of(fast, args.repeat)
        t_ref = best_of(ref, args.repeat)
        print(f"{name:<32}{t_fast * 1e3:>12.3f}{t_ref * 1e3:>12.3f}{t_ref / t_fast:>10.1f}x")


if __name__ == "__main__":
    main()

"""Timing of Toeplitz hashing: NTT path against the dense reference.

    python scripts/bench_pa.py [--max-log2 22]
"""

import argparse
import time

import numpy as np

from cowqkd.privacy import ToeplitzSpec, toeplitz_direct, toeplitz_fft


def best_of(fn, reps=3):
    out = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        out = min(out, time.perf_counter() - t0)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--max-log2", type=int, default=22)
    ap.add_argument("--direct-max-log2", type=int, default=13)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'n':>9} {'m':>9} {'ntt_s':>9} {'direct_s':>9} {'Mbit/s':>8}")
    for k in range(10, args.max_log2 + 1, 2):
        n = 1 << k
        m = n // 2
        spec = ToeplitzSpec.random(n, m, rng)
        key = rng.integers(0, 2, n, dtype=np.uint8)
        t_fft = best_of(lambda: toeplitz_fft(spec, key), 1 if k > 18 else 3)
        t_dir = ""
        if k <= args.direct_max_log2:
            t_dir = f"{best_of(lambda: toeplitz_direct(spec, key)):.4f}"
        print(f"{n:>9} {m:>9} {t_fft:>9.4f} {t_dir:>9} {n / t_fft / 1e6:>8.2f}")


if __name__ == "__main__":
    main()

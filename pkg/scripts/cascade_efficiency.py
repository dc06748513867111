"""Correction rate and disclosure of Cascade under different block schedules.

For each QBER and growth factor, reconciles seeded 10^4-bit frames. Reports
the count of error-free frames and the disclosure statistics, including the
efficiency disclosed / (n h(QBER)).

    python scripts/cascade_efficiency.py [--frames 200] [--growth 0.5,1,2]
"""

import argparse

import numpy as np

from cowqkd.cascade import CascadeConfig, reconcile_frames
from cowqkd.core import binary_entropy


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=200)
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--qber", default="0.005,0.01,0.02,0.03")
    ap.add_argument("--growth", default="0.5,1,2")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"{'qber':>6} {'growth':>6} {'ok':>9} {'mean':>8} {'worst':>6} {'1.6nh':>6} {'eff':>6}")
    for q in (float(x) for x in args.qber.split(",")):
        nh = args.n * binary_entropy(q)
        for g in (float(x) for x in args.growth.split(",")):
            ok, disclosed = 0, []
            for s in range(args.frames):
                rng = np.random.default_rng([args.seed, s, int(q * 1e6)])
                a = rng.integers(0, 2, args.n, dtype=np.uint8)
                b = a ^ (rng.random(args.n) < q).astype(np.uint8)
                res = reconcile_frames(a, b, q, CascadeConfig(master_seed=s, growth=g))
                ok += bool(np.array_equal(res.corrected_key, a))
                disclosed.append(res.disclosed_bits)
            m = float(np.mean(disclosed))
            print(f"{q:>6.3f} {g:>6.2f} {ok:>4}/{args.frames:<4} {m:>8.1f} {max(disclosed):>6} "
                  f"{1.6 * nh:>6.0f} {m / nh:>6.3f}")


if __name__ == "__main__":
    main()

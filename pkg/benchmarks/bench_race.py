"""Compiled vs pure-Python block-race kernel.

    python3 benchmarks/bench_race.py [--trials N] [--repeat R]

Both backends consume the same per-trial random streams, so the success
counts must match exactly; the script exits 1 if they do not.
"""

from __future__ import annotations

import argparse
import sys
import time

from dnas import race
from dnas.doublespend import walk_cutoff

CASES = [(0.1, 0), (0.1, 6), (0.3, 2), (0.45, 6)]


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    kernels = race.backends()
    print(f"backends: {', '.join(kernels)}; trials per case {args.trials}")
    print(f"{'q':>5} {'z':>3} " + " ".join(f"{name + ' s':>12}" for name in kernels) + f" {'speedup':>8}  counts")
    ok = True
    for q, z in CASES:
        threshold, cutoff = int(q * 2**53), walk_cutoff(q)
        timings, counts = {}, {}
        for name, kernel in kernels.items():
            best = float("inf")
            for _ in range(args.repeat):
                t0 = time.perf_counter()
                counts[name] = int(kernel(threshold, z, args.trials, args.seed, cutoff))
                best = min(best, time.perf_counter() - t0)
            timings[name] = best
        same = len(set(counts.values())) == 1
        ok &= same
        speed = (timings["python"] / timings["compiled"]) if "compiled" in timings else float("nan")
        print(f"{q:>5.2f} {z:>3d} " + " ".join(f"{timings[n]:>12.4f}" for n in kernels)
              + f" {speed:>8.1f}x  {counts} {'' if same else 'MISMATCH'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())

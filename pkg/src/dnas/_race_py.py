"""Numpy fallback for the block-race kernel.

Vectorised across trials instead of looping per trial, but every trial reads
its own splitmix64 stream in the same order as the compiled kernel, so the
success counts are identical.
"""

from __future__ import annotations

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
M1 = np.uint64(0xBF58476D1CE4E5B9)
M2 = np.uint64(0x94D049BB133111EB)
S11, S27, S30, S31 = (np.uint64(s) for s in (11, 27, 30, 31))

BATCH = 1 << 17


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> S30)) * M1
    z = (z ^ (z >> S27)) * M2
    return z ^ (z >> S31)


def _draw(state: np.ndarray, idx: np.ndarray, threshold: np.uint64) -> np.ndarray:
    s = state[idx] + GAMMA
    state[idx] = s
    return (_mix(s) >> S11) < threshold


def race_successes(threshold: int, z: int, trials: int, seed: int, cutoff: int, first_trial: int = 0) -> int:
    thr = np.uint64(threshold)
    seed64 = np.uint64(seed & (2**64 - 1))
    total = 0
    with np.errstate(over="ignore"):
        for start in range(first_trial, first_trial + trials, BATCH):
            stop = min(start + BATCH, first_trial + trials)
            t = np.arange(start + 1, stop + 1, dtype=np.uint64)
            state = _mix(seed64 ^ _mix(t))
            n = stop - start
            m = np.zeros(n, dtype=np.int64)
            h = np.zeros(n, dtype=np.int64)
            idx = np.arange(n) if z > 0 else np.arange(0)
            while idx.size:
                att = _draw(state, idx, thr)
                m[idx] += att
                h[idx] += ~att
                idx = idx[h[idx] < z]
            diff = m - z
            idx = np.nonzero((diff < 1) & (diff > -cutoff))[0]
            while idx.size:
                att = _draw(state, idx, thr)
                diff[idx] += np.where(att, 1, -1)
                d = diff[idx]
                idx = idx[(d < 1) & (d > -cutoff)]
            total += int(np.count_nonzero(diff >= 1))
    return total

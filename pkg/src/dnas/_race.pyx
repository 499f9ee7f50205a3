# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled block-race kernel. Must stay bit-identical to ``_race_py``."""

from libc.stdint cimport int64_t, uint64_t

cdef uint64_t GAMMA = 0x9E3779B97F4A7C15
cdef uint64_t M1 = 0xBF58476D1CE4E5B9
cdef uint64_t M2 = 0x94D049BB133111EB


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * M1
    z = (z ^ (z >> 27)) * M2
    return z ^ (z >> 31)


def race_successes(uint64_t threshold, int64_t z, int64_t trials, uint64_t seed, int64_t cutoff,
                   int64_t first_trial=0):
    """Count trials in which the attacker chain ends strictly longer.

    Each trial t owns a splitmix64 stream seeded by ``mix(seed ^ mix(t + 1))``; a
    draw is an attacker block when ``(out >> 11) < threshold``.
    """
    cdef int64_t t, m, h, diff
    cdef int64_t successes = 0
    cdef uint64_t state
    with nogil:
        for t in range(first_trial, first_trial + trials):
            state = _mix(seed ^ _mix(<uint64_t>(t + 1)))
            m = 0
            h = 0
            while h < z:
                state = state + GAMMA
                if (_mix(state) >> 11) < threshold:
                    m += 1
                else:
                    h += 1
            diff = m - z
            while diff < 1 and diff > -cutoff:
                state = state + GAMMA
                if (_mix(state) >> 11) < threshold:
                    diff += 1
                else:
                    diff -= 1
            if diff >= 1:
                successes += 1
    return successes

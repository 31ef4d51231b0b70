"""Counter-based random streams.

Every draw is a pure function of ``(seed, stream key, counter)``, so work can
be split across vertices, trials or processes in any order without changing
the output. The mixer is the SplitMix64 finalizer.
"""

import math

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0

MASK64 = (1 << 64) - 1


@njit(cache=True, inline="always")
def mix64(z):
    z = np.uint64(z)
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def derive(key, value):
    """Child key of ``key`` labelled by the signed integer ``value``."""
    v = np.uint64(np.int64(value))
    return mix64(np.uint64(key) ^ mix64(v + _GOLDEN))


@njit(cache=True)
def derive2(key, a, b):
    return derive(derive(key, a), b)


@njit(cache=True)
def uniform(key, counter):
    """Uniform double in [0, 1) at position ``counter`` of stream ``key``."""
    z = mix64(np.uint64(key) + _GOLDEN * (np.uint64(counter) + _ONE))
    return float(z >> _S11) * _INV53


@njit(cache=True)
def normal(key, counter):
    """Standard normal via Box-Muller; consumes counters ``2c`` and ``2c+1``."""
    u1 = uniform(key, 2 * counter)
    u2 = uniform(key, 2 * counter + 1)
    return np.sqrt(-2.0 * np.log(1.0 - u1)) * np.cos(2.0 * np.pi * u2)


def root_key(seed, stream=0):
    """Key (``np.uint64``) of the master stream for a 64-bit seed and a stream index."""
    s = np.uint64(int(seed) & MASK64)
    return np.uint64(derive(np.uint64(mix64(s)), int(stream)))


def trial_seed(master_seed, trial_index, label=0):
    """Per-trial 64-bit seed, a deterministic function of its arguments only."""
    return int(derive2(root_key(master_seed, label), int(trial_index), 0x5EED)) & MASK64


@njit(cache=True)
def poisson(mean, key, counter0):
    """Poisson variate from stream ``key`` starting at ``counter0``.

    Inversion for ``mean < 10``; Hormann's PTRS transformed rejection above.
    Returns ``(value, next_counter)``.
    """
    if mean <= 0.0:
        return 0, counter0
    c = counter0
    if mean < 10.0:
        u = uniform(key, c)
        c += 1
        p = np.exp(-mean)
        cdf = p
        k = 0
        while u >= cdf and k < 1000:
            k += 1
            p *= mean / k
            cdf += p
        return k, c
    smu = np.sqrt(mean)
    b = 0.931 + 2.53 * smu
    a = -0.059 + 0.02483 * b
    inv_alpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    logmu = np.log(mean)
    while True:
        u = uniform(key, c) - 0.5
        v = uniform(key, c + 1)
        c += 2
        us = 0.5 - abs(u)
        k = np.floor((2.0 * a / us + b) * u + mean + 0.43)
        if us >= 0.07 and v <= vr:
            return int(k), c
        if k < 0.0 or (us < 0.013 and v > us):
            continue
        lhs = np.log(v) + np.log(inv_alpha) - np.log(a / (us * us) + b)
        rhs = -mean + k * logmu - math.lgamma(k + 1.0)
        if lhs <= rhs:
            return int(k), c

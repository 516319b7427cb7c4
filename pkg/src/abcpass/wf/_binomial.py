"""Binomial variates for the compiled WF kernels.

numba's ``np.random.binomial`` uses inversion, whose cost grows with
``n * p``; Wright-Fisher steps with ``N`` up to ~3e4 copies need the
constant-time transformed rejection method (BTRS, Hormann 1993) instead.
Draws come from numba's global stream, so ``np.random.seed`` controls them.
"""

import math

import numpy as np
from numba import njit

_FC = np.array([0.08106146679532726, 0.04134069595540929, 0.02767792568499834, 0.02079067210376509,
                0.01664469118982119, 0.01387612882307075, 0.01189670994589177, 0.01041126526197209,
                0.009255462182712733, 0.008330563433362871])

INVERSION_LIMIT = 10.0


@njit(cache=True, nogil=True)
def _stirling_tail(k):
    # log(k!) - [(k + 1/2) log(k + 1) - (k + 1) + log(2 pi)/2]
    if k < 10:
        return _FC[k]
    r = 1.0 / (k + 1.0)
    r2 = r * r
    return (1.0 / 12.0 - (1.0 / 360.0 - r2 / 1260.0) * r2) * r


@njit(cache=True, nogil=True)
def _btrs(n, p):
    # requires p <= 0.5 and n * p >= 10
    spq = math.sqrt(n * p * (1.0 - p))
    b = 1.15 + 2.53 * spq
    a = -0.0873 + 0.0248 * b + 0.01 * p
    c = n * p + 0.5
    vr = 0.92 - 4.2 / b
    r = p / (1.0 - p)
    alpha = (2.83 + 5.1 / b) * spq
    m = int(math.floor((n + 1) * p))
    h = (m + 0.5) * math.log((m + 1) / (r * (n - m + 1))) + _stirling_tail(m) + _stirling_tail(n - m)
    while True:
        u = np.random.random() - 0.5
        v = np.random.random()
        us = 0.5 - abs(u)
        k = int(math.floor((2.0 * a / us + b) * u + c))
        if k < 0 or k > n:
            continue
        if us >= 0.07 and v <= vr:
            return k
        v = math.log(v * alpha / (a / (us * us) + b))
        bound = h + (n + 1) * math.log((n - m + 1) / (n - k + 1)) + (k + 0.5) * math.log(r * (n - k + 1) / (k + 1)) \
            - _stirling_tail(k) - _stirling_tail(n - k)
        if v <= bound:
            return k


@njit(cache=True, nogil=True)
def binomial(n, p):
    """Exact Bin(n, p) draw."""
    if p <= 0.0 or n <= 0:
        return 0
    if p >= 1.0:
        return n
    flip = p > 0.5
    pp = 1.0 - p if flip else p
    if n * pp < INVERSION_LIMIT:
        k = np.random.binomial(n, pp)
    else:
        k = _btrs(n, pp)
    return n - k if flip else k


@njit(cache=True)
def binomial_batch(seed, n, p, size):
    """``size`` draws with a fixed seed; for testing the sampler."""
    np.random.seed(seed)
    out = np.empty(size, dtype=np.int64)
    for i in range(size):
        out[i] = binomial(n, p)
    return out

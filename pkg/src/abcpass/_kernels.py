"""Compiled inner loops for models that expose a numba simulator.

The kernels implement exactly the same algorithms as the pure-Python paths
in :mod:`abcpass.sampler`; they differ only in where random numbers come
from (numba's per-thread Mersenne Twister, seeded once per call).

Simulator signature: ``sim(theta_natural, params, out) -> None``.
"""

import numpy as np
from numba import njit

MAX_CONSECUTIVE_FAILURES = 10_000

STATUS_OK = 0
STATUS_SIM_FAILED = 1


@njit(cache=True, nogil=True)
def reflect(x, lo, hi):
    span = hi - lo
    if span <= 0.0:
        return lo
    y = (x - lo) % (2.0 * span)
    if y > span:
        y = 2.0 * span - y
    return lo + y


@njit(cache=True, nogil=True)
def _propose(x, w, lo, hi):
    u = np.random.random()
    return reflect(x + w * (2.0 * u - 1.0), lo, hi) if w <= hi - lo else lo + u * (hi - lo)


@njit(cache=True, nogil=True)
def _natural(theta, is_log, out):
    for j in range(theta.shape[0]):
        out[j] = 10.0 ** theta[j] if is_log[j] else theta[j]


@njit(cache=True, nogil=True)
def _all_finite(s):
    for j in range(s.shape[0]):
        if not np.isfinite(s[j]):
            return False
    return True


@njit(cache=True, nogil=True)
def boxcox_into(s, lam, shift, floor, active, y):
    for j in range(s.shape[0]):
        if not active[j]:
            y[j] = s[j]
            continue
        x = s[j] + shift[j]
        if x <= 0.0:
            x = floor[j]
        if lam[j] == 0.0:
            y[j] = np.log(x)
        else:
            y[j] = (x ** lam[j] - 1.0) / lam[j]


@njit(cache=True, nogil=True)
def _record(t, theta, rec, burn, hist_lo, hist_hi, hist):
    if rec.shape[0] > 0:
        for j in range(theta.shape[0]):
            rec[t, j] = theta[j]
    K = hist.shape[1]
    if K > 0 and t >= burn:
        for j in range(theta.shape[0]):
            span = hist_hi[j] - hist_lo[j]
            k = int((theta[j] - hist_lo[j]) / span * K) if span > 0 else 0
            if k >= K:
                k = K - 1
            elif k < 0:
                k = 0
            hist[j, k] += 1


@njit(cache=True, nogil=True)
def _simulate(sim, params, prop, is_log, nat, s, failures):
    """Simulate until a finite statistics vector appears; returns success."""
    _natural(prop, is_log, nat)
    streak = 0
    while True:
        sim(nat, params, s)
        if _all_finite(s):
            return True
        failures[0] += 1
        streak += 1
        if streak > MAX_CONSECUTIVE_FAILURES:
            return False


@njit(cache=True, nogil=True)
def abc_mcmc_kernel(sim, params, m, s_obs, scale, delta, widths, lo, hi, is_log, theta0, T, seed,
                    rec, burn, hist_lo, hist_hi, hist, counts, failures):
    """Full-vector ABC-MCMC with flat priors (MH ratio 1 inside the box).

    ``counts`` is (5, n): proposals, simulations, distance passes, accepts
    and proposals that fell back to a uniform draw on the support.
    """
    np.random.seed(seed)
    n = theta0.shape[0]
    theta = theta0.copy()
    prop = theta0.copy()
    nat = np.empty(n)
    s = np.empty(m)
    for t in range(T):
        for j in range(n):
            prop[j] = _propose(theta[j], widths[j], lo[j], hi[j])
            if widths[j] > hi[j] - lo[j]:
                counts[4, j] += 1
        if not _simulate(sim, params, prop, is_log, nat, s, failures):
            return STATUS_SIM_FAILED
        d2 = 0.0
        for j in range(m):
            z = (s[j] - s_obs[j]) / scale[j]
            d2 += z * z
        for j in range(n):
            counts[0, j] += 1
            counts[1, j] += 1
        if np.sqrt(d2) <= delta:
            for j in range(n):
                counts[2, j] += 1
                counts[3, j] += 1
                theta[j] = prop[j]
        _record(t, theta, rec, burn, hist_lo, hist_hi, hist)
    return STATUS_OK


@njit(cache=True, nogil=True)
def abc_pass_kernel(sim, params, m, beta, row_start, tau_scale, t_obs, deltas,
                    lam, shift, floor, bc_active, cum_probs, widths, lo, hi, is_log, theta0, T, seed,
                    rec, burn, hist_lo, hist_hi, hist, counts, failures):
    """ABC-PaSS with flat priors: one component per iteration, accepted on
    the standardized distance of that parameter's projection rows."""
    np.random.seed(seed)
    n = theta0.shape[0]
    theta = theta0.copy()
    prop = theta0.copy()
    nat = np.empty(n)
    s = np.empty(m)
    y = np.empty(m)
    for t in range(T):
        i = 0
        if n > 1:
            u = np.random.random()
            while i < n - 1 and u >= cum_probs[i]:
                i += 1
        for j in range(n):
            prop[j] = theta[j]
        prop[i] = _propose(theta[i], widths[i], lo[i], hi[i])
        counts[0, i] += 1
        if widths[i] > hi[i] - lo[i]:
            counts[4, i] += 1
        if not _simulate(sim, params, prop, is_log, nat, s, failures):
            return STATUS_SIM_FAILED
        counts[1, i] += 1
        boxcox_into(s, lam, shift, floor, bc_active, y)
        d2 = 0.0
        for r in range(row_start[i], row_start[i + 1]):
            tau = 0.0
            for j in range(m):
                tau += beta[r, j] * y[j]
            z = (tau - t_obs[r]) / tau_scale[r]
            d2 += z * z
        if np.sqrt(d2) <= deltas[i]:
            counts[2, i] += 1
            counts[3, i] += 1
            theta[i] = prop[i]
        _record(t, theta, rec, burn, hist_lo, hist_hi, hist)
    return STATUS_OK


@njit(cache=True, nogil=True)
def pilot_kernel(sim, params, thetas, is_log, m, seed, out):
    """Fill ``out[k]`` with statistics simulated at working-space ``thetas[k]``."""
    np.random.seed(seed)
    n = thetas.shape[1]
    nat = np.empty(n)
    s = np.empty(m)
    failures = np.zeros(1, dtype=np.int64)
    for k in range(thetas.shape[0]):
        if not _simulate(sim, params, thetas[k], is_log, nat, s, failures):
            return STATUS_SIM_FAILED
        for j in range(m):
            out[k, j] = s[j]
    return STATUS_OK

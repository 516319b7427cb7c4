"""Wright-Fisher allele trajectories and the Fs' change statistics.

A trajectory is observed at the generations of a :class:`SamplingPlan`; at
each of them a binomial sample of the given size is drawn from the
population frequency. Per locus, the Fs' values of consecutive samples are
summed separately over increasing and decreasing pairs and extended by
their squares and cross product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ..errors import ContractViolation
from ._binomial import binomial

STAT_NAMES = ("Fsi", "Fsd", "Fsi2", "Fsd2", "FsiFsd")


@dataclass(frozen=True)
class SamplingPlan:
    generations: tuple[int, ...]
    sizes: tuple[int, ...]

    def __post_init__(self):
        g = tuple(int(x) for x in self.generations)
        n = tuple(int(x) for x in self.sizes)
        if len(g) != len(n):
            raise ContractViolation("generations and sample sizes differ in length")
        if len(g) < 2:
            raise ContractViolation("a sampling plan needs at least two timepoints")
        if g[0] != 0:
            raise ContractViolation("the first timepoint must be generation 0")
        if any(b <= a for a, b in zip(g, g[1:])):
            raise ContractViolation("generations must be strictly increasing")
        if min(n) < 1:
            raise ContractViolation("sample sizes must be >= 1")
        object.__setattr__(self, "generations", g)
        object.__setattr__(self, "sizes", n)

    @classmethod
    def regular(cls, timepoints: int, spacing: int, size: int) -> "SamplingPlan":
        return cls(tuple(range(0, timepoints * spacing, spacing)), (size,) * timepoints)

    def __len__(self) -> int:
        return len(self.generations)


@dataclass(frozen=True)
class LocusTrajectory:
    plan: SamplingPlan
    counts: tuple[int, ...]

    def __post_init__(self):
        c = tuple(int(x) for x in self.counts)
        if len(c) != len(self.plan):
            raise ContractViolation("one count per timepoint required")
        if any(not 0 <= k <= n for k, n in zip(c, self.plan.sizes)):
            raise ContractViolation("counts must lie within [0, sample size]")
        object.__setattr__(self, "counts", c)

    @property
    def freqs(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float) / np.asarray(self.plan.sizes, dtype=float)


def wf_simulate_locus(Ne: int, s: float, init_freq: float, plan: SamplingPlan, seed,
                      diploid: bool = False) -> LocusTrajectory:
    """Simulate one locus under selection and drift.

    Each generation applies selection ``p* = p(1+s)/(1+ps)`` and then
    binomial resampling of ``Ne`` (or ``2Ne`` when ``diploid``) copies.
    """
    if Ne < 2:
        raise ContractViolation(f"Ne must be >= 2, got {Ne}")
    if not s > -1:
        raise ContractViolation(f"selection coefficient must be > -1, got {s}")
    if not 0 < init_freq < 1:
        raise ContractViolation(f"initial frequency must lie in (0, 1), got {init_freq}")
    rng = np.random.default_rng(seed)
    N = int(Ne) * (2 if diploid else 1)
    p = float(init_freq)
    counts = []
    g_prev = 0
    for g, n in zip(plan.generations, plan.sizes):
        for _ in range(g - g_prev):
            if p <= 0.0 or p >= 1.0:
                break
            p = rng.binomial(N, p * (1 + s) / (1 + p * s)) / N
        g_prev = g
        counts.append(int(rng.binomial(n, p)))
    return LocusTrajectory(plan, tuple(counts))


def fsprime_pair(x: float, y: float, t: int, n_x: int, n_y: int) -> float:
    """Fs' between sample frequencies ``x`` and ``y`` taken ``t`` generations apart.

    ``Fs = (x-y)^2 / (z(1-z))`` with ``z = (x+y)/2`` and ``n~`` the harmonic
    mean of the sample sizes;
    ``Fs' = [Fs(1 - 1/(2n~)) - 2/n~] / [t (1 + Fs/4)(1 - 1/n_y)]``.
    """
    z = 0.5 * (x + y)
    if not 0 < z < 1:
        raise ContractViolation("Fs is undefined when both frequencies are 0 or both are 1")
    if t < 1 or n_x < 2 or n_y < 2:
        raise ContractViolation("need t >= 1 and sample sizes >= 2")
    fs = (x - y) ** 2 / (z * (1 - z))
    n_h = 2.0 / (1.0 / n_x + 1.0 / n_y)
    return (fs * (1 - 1 / (2 * n_h)) - 2 / n_h) / ((1 + fs / 4) * (1 - 1 / n_y)) / t


@dataclass(frozen=True)
class LocusStats:
    fsi: float
    fsd: float
    usable_pairs: int

    @property
    def values(self) -> np.ndarray:
        return np.array([self.fsi, self.fsd, self.fsi**2, self.fsd**2, self.fsi * self.fsd])

    @property
    def degenerate(self) -> bool:
        return self.usable_pairs == 0


def locus_stats(traj: LocusTrajectory) -> LocusStats:
    """Sum Fs' over increasing and decreasing consecutive pairs.

    Pairs where both samples are 0 or both are 1 are skipped; pairs with
    equal frequencies count towards neither sum.
    """
    x = traj.freqs
    g = traj.plan.generations
    n = traj.plan.sizes
    fsi = fsd = 0.0
    used = 0
    for k in range(len(x) - 1):
        a, b = x[k], x[k + 1]
        z = 0.5 * (a + b)
        if z <= 0 or z >= 1:
            continue
        used += 1
        if b == a:
            continue
        v = fsprime_pair(a, b, g[k + 1] - g[k], n[k], n[k + 1])
        if b > a:
            fsi += v
        else:
            fsd += v
    return LocusStats(fsi, fsd, used)


# -- compiled versions used inside the samplers ---------------------------------------------------

@njit(cache=True, nogil=True)
def _fsprime(x, y, t, nx, ny):
    z = 0.5 * (x + y)
    fs = (x - y) ** 2 / (z * (1.0 - z))
    nh = 2.0 / (1.0 / nx + 1.0 / ny)
    return (fs * (1.0 - 1.0 / (2.0 * nh)) - 2.0 / nh) / ((1.0 + fs / 4.0) * (1.0 - 1.0 / ny)) / t


@njit(cache=True, nogil=True)
def stats_from_counts(counts, gens, sizes, ntp, out):
    """Fill ``out[0:5]`` from the first ``ntp`` entries; returns usable pairs."""
    fsi = 0.0
    fsd = 0.0
    used = 0
    for k in range(ntp - 1):
        a = counts[k] / sizes[k]
        b = counts[k + 1] / sizes[k + 1]
        z = 0.5 * (a + b)
        if z <= 0.0 or z >= 1.0:
            continue
        used += 1
        if a == b:
            continue
        v = _fsprime(a, b, gens[k + 1] - gens[k], sizes[k], sizes[k + 1])
        if b > a:
            fsi += v
        else:
            fsd += v
    out[0] = fsi
    out[1] = fsd
    out[2] = fsi * fsi
    out[3] = fsd * fsd
    out[4] = fsi * fsd
    return used


@njit(cache=True, nogil=True)
def simulate_counts(N, s, p0, gens, sizes, ntp, counts):
    """Wright-Fisher trajectory with ``N`` copies; samples into ``counts``."""
    p = p0
    g_prev = 0
    for k in range(ntp):
        for _ in range(gens[k] - g_prev):
            if p <= 0.0 or p >= 1.0:
                break
            p = binomial(N, p * (1.0 + s) / (1.0 + p * s)) / N
        g_prev = gens[k]
        counts[k] = binomial(sizes[k], p)


@njit(cache=True, nogil=True)
def simulate_locus_stats(N, s, p0, gens, sizes, ntp, counts, out):
    simulate_counts(N, s, p0, gens, sizes, ntp, counts)
    return stats_from_counts(counts, gens, sizes, ntp, out)


@njit(cache=True, nogil=True)
def simulate_stats_batch(seed, N, s, p0, locus, gens, sizes, ntp, out):
    """Row ``r`` simulates locus ``locus[r]`` with ``N[r]`` copies and
    selection ``s[r]`` from that locus's start frequency ``p0[locus[r]]``;
    stats go to ``out[r]``.

    ``gens``/``sizes`` are padded ``(L, Tmax)`` arrays, ``ntp`` their lengths.
    A negative ``seed`` continues the current random stream.
    """
    if seed >= 0:
        np.random.seed(seed)
    counts = np.empty(gens.shape[1], dtype=np.int64)
    for r in range(N.shape[0]):
        j = locus[r]
        simulate_locus_stats(N[r], s[r], p0[j], gens[j], sizes[j], ntp[j], counts, out[r])


def copies(log10_ne: float, diploid: bool = False) -> int:
    """Number of gene copies resampled per generation for ``log10(Ne)``."""
    return max(2, int(round(10.0 ** log10_ne))) * (2 if diploid else 1)


def pack_plans(plans) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pad a list of plans into ``(gens, sizes, ntp)`` arrays for the kernels."""
    T = max(len(p) for p in plans)
    gens = np.zeros((len(plans), T), dtype=np.int64)
    sizes = np.ones((len(plans), T), dtype=np.int64)
    ntp = np.array([len(p) for p in plans], dtype=np.int64)
    for j, p in enumerate(plans):
        gens[j, :len(p)] = p.generations
        sizes[j, :len(p)] = p.sizes
    return gens, sizes, ntp


def trajectory_stats_array(trajs) -> np.ndarray:
    """``(L, 5)`` statistics of observed trajectories."""
    return np.stack([locus_stats(t).values for t in trajs]) if trajs else np.zeros((0, 5))


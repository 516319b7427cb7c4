"""Analytic posteriors, binned L1 distances and the tolerance/width sweep.

L1 here is the unnormalized ``sum_k |p_k - q_k|`` over ``K`` equal-width
bins of the prior support, so it ranges over ``[0, 2]``.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import integrate, stats

from .calibration import projection_distances
from .errors import ContractViolation
from .model import ParameterSpace, ProposalKernel
from .sampler import run_abc_mcmc, run_abc_pass
from .statlearn import LinearProjection, PilotSet


@dataclass(frozen=True)
class BinnedDensity:
    """Probability masses on ``K`` equal-width bins of ``[lo, hi]``."""

    lo: float
    hi: float
    masses: np.ndarray

    def __post_init__(self):
        masses = np.asarray(self.masses, dtype=float)
        if masses.ndim != 1 or masses.shape[0] < 10:
            raise ContractViolation("a binned density needs at least 10 bins")
        if not self.hi > self.lo:
            raise ContractViolation("empty support")
        if np.any(masses < 0) or abs(masses.sum() - 1.0) > 1e-9:
            raise ContractViolation(f"bin masses must be >= 0 and sum to 1 (sum={masses.sum()!r})")
        object.__setattr__(self, "masses", masses)

    @property
    def K(self) -> int:
        return self.masses.shape[0]

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.K + 1)

    @classmethod
    def from_samples(cls, samples, lo, hi, K=100) -> "BinnedDensity":
        x = np.asarray(samples, dtype=float).ravel()
        if x.size == 0:
            raise ContractViolation("no samples")
        if np.any(x < lo) or np.any(x > hi):
            raise ContractViolation("samples outside the support")
        counts, _ = np.histogram(x, bins=K, range=(lo, hi))
        return cls(lo, hi, counts / counts.sum())

    @classmethod
    def from_counts(cls, counts, lo, hi) -> "BinnedDensity":
        counts = np.asarray(counts, dtype=float)
        return cls(lo, hi, counts / counts.sum())

    @classmethod
    def from_cdf(cls, cdf: Callable, lo, hi, K=100) -> "BinnedDensity":
        """Bin masses from a CDF, renormalized to ``[lo, hi]``."""
        c = np.asarray(cdf(np.linspace(lo, hi, K + 1)), dtype=float)
        m = np.clip(np.diff(c), 0.0, None)
        if not m.sum() > 0:
            raise ContractViolation("density has no mass on the support")
        return cls(lo, hi, m / m.sum())

    @classmethod
    def from_pdf(cls, pdf: Callable, lo, hi, K=100) -> "BinnedDensity":
        """Bin masses by adaptive quadrature of ``pdf`` per bin, renormalized."""
        e = np.linspace(lo, hi, K + 1)
        m = np.array([integrate.quad(pdf, a, b, epsabs=1e-13, epsrel=1e-10, limit=200)[0]
                      for a, b in zip(e[:-1], e[1:])])
        m = np.clip(m, 0.0, None)
        if not m.sum() > 0:
            raise ContractViolation("density has no mass on the support")
        return cls(lo, hi, m / m.sum())

    @classmethod
    def uniform(cls, lo, hi, K=100) -> "BinnedDensity":
        return cls(lo, hi, np.full(K, 1.0 / K))


def binned_truth(dist, lo, hi, K=100) -> BinnedDensity:
    """Bin a scipy distribution (via its CDF) or a bare pdf (via quadrature)."""
    if hasattr(dist, "cdf"):
        return BinnedDensity.from_cdf(dist.cdf, lo, hi, K)
    return BinnedDensity.from_pdf(dist, lo, hi, K)


def l1_distance(samples, truth, lo=None, hi=None, K: int = 100, min_samples: int = 1000) -> float:
    """L1 distance between the histogram of ``samples`` and ``truth``.

    ``truth`` is a :class:`BinnedDensity` (its support and bins are used) or
    a distribution/pdf binned on ``[lo, hi]`` with ``K`` bins.

    Raises
    ------
    ContractViolation
        Fewer than ``min_samples`` samples, or samples outside the support.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < min_samples:
        raise ContractViolation(f"need at least {min_samples} samples, got {x.size}")
    if not isinstance(truth, BinnedDensity):
        truth = binned_truth(truth, lo, hi, K)
    est = BinnedDensity.from_samples(x, truth.lo, truth.hi, truth.K)
    return l1_masses(est, truth)


def l1_masses(a: BinnedDensity, b: BinnedDensity) -> float:
    if a.K != b.K or a.lo != b.lo or a.hi != b.hi:
        raise ContractViolation("binnings differ")
    return float(np.abs(a.masses - b.masses).sum())


def l1_samples(a, b, lo, hi, K: int = 100) -> float:
    """Sample-vs-sample variant; symmetric in its arguments."""
    return l1_masses(BinnedDensity.from_samples(a, lo, hi, K), BinnedDensity.from_samples(b, lo, hi, K))


@dataclass(frozen=True)
class NormalPosterior:
    """Posterior marginals of ``(mu, sigma2)`` given ``(xbar, S2)`` from ``n`` draws.

    ``mu ~ N(xbar, S2/n)``; ``sigma2`` has density
    ``((n-1)/S2) f_chi2(n-1)((n-1) sigma2 / S2)``, i.e. a chi-square with
    ``n-1`` degrees of freedom scaled by ``S2/(n-1)``.
    """

    xbar: float
    S2: float
    n: int

    @property
    def mu(self):
        return stats.norm(self.xbar, math.sqrt(self.S2 / self.n))

    @property
    def sigma2(self):
        return stats.chi2(self.n - 1, scale=self.S2 / (self.n - 1))

    def pdf(self, mu, sigma2):
        return self.mu.pdf(mu) * self.sigma2.pdf(sigma2)

    def marginals(self, space: ParameterSpace, K: int = 100) -> dict[str, BinnedDensity]:
        """Marginals truncated to the prior box and binned, keyed by the
        space's two parameter names (mean first)."""
        names = space.names
        return {names[0]: binned_truth(self.mu, space.lower[0], space.upper[0], K),
                names[1]: binned_truth(self.sigma2, space.lower[1], space.upper[1], K)}


def normal_posterior(xbar: float, S2: float, n: int) -> NormalPosterior:
    if n < 2:
        raise ContractViolation("need n >= 2")
    if not S2 > 0:
        raise ContractViolation("S2 must be > 0")
    return NormalPosterior(float(xbar), float(S2), int(n))


@dataclass(frozen=True)
class GaussianPosterior:
    mean: np.ndarray
    cov: np.ndarray

    def marginal(self, i: int):
        return stats.norm(self.mean[i], math.sqrt(self.cov[i, i]))

    def marginals(self, space: ParameterSpace, K: int = 100) -> dict[str, BinnedDensity]:
        return {name: binned_truth(self.marginal(i), space.lower[i], space.upper[i], K)
                for i, name in enumerate(space.names)}


def glm_posterior(C, s_obs, sigma_s=None, prior_mean=None, prior_cov=None) -> GaussianPosterior:
    """Posterior of ``theta`` for ``s = C theta + eps``, ``eps ~ N(0, sigma_s)``.

    With a normal prior ``N(prior_mean, prior_cov)`` the posterior is
    ``N(D d, D)`` with ``D = (C' sigma_s^-1 C + prior_cov^-1)^-1`` and
    ``d = C' sigma_s^-1 s_obs + prior_cov^-1 prior_mean``. Without a prior
    (flat) the precision term is dropped.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    s_obs = np.asarray(s_obs, dtype=float)
    m, n = C.shape
    S = np.eye(m) if sigma_s is None else np.asarray(sigma_s, dtype=float)
    Si = np.linalg.inv(S)
    prec = C.T @ Si @ C
    d = C.T @ Si @ s_obs
    if prior_cov is not None:
        Pi = np.linalg.inv(np.asarray(prior_cov, dtype=float))
        mu0 = np.zeros(n) if prior_mean is None else np.asarray(prior_mean, dtype=float)
        prec = prec + Pi
        d = d + Pi @ mu0
    w = np.linalg.eigvalsh(0.5 * (prec + prec.T))
    if not w[0] > 1e-12 * max(abs(w[-1]), 1e-300):
        raise ContractViolation("posterior precision is singular (flat prior with rank-deficient design?)")
    D = np.linalg.inv(prec)
    D = 0.5 * (D + D.T)
    return GaussianPosterior(D @ d, D)


def prior_baseline(truth: Mapping[str, BinnedDensity]) -> dict[str, float]:
    """L1 between the flat prior and each binned true marginal."""
    return {k: l1_masses(BinnedDensity.uniform(t.lo, t.hi, t.K), t) for k, t in truth.items()}


@dataclass(frozen=True)
class SweepGrid:
    """Cells of the tuning sweep.

    ``tolerances`` are fractions ``f`` mapped to the ``f * tolerance_scale``
    quantile of the pilot distances (``tolerance_scale = 0.01`` makes them
    quantiles of the 1% closest pilot rows); ``widths`` are proposal
    half-widths as fractions of each prior range.
    """

    tolerances: tuple[float, ...]
    widths: tuple[float, ...]
    replicates: int
    iterations: int
    burn_in: float = 0.1
    bins: int = 100
    tolerance_scale: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "tolerances", tuple(float(x) for x in self.tolerances))
        object.__setattr__(self, "widths", tuple(float(x) for x in self.widths))
        if not self.tolerances or not self.widths:
            raise ContractViolation("sweep grid needs tolerances and widths")
        if self.replicates < 1 or self.iterations < 1:
            raise ContractViolation("need at least one replicate and one iteration")
        if not 0 < self.tolerance_scale <= 1:
            raise ContractViolation("tolerance_scale must lie in (0, 1]")

    @property
    def cells(self) -> list[tuple[float, float]]:
        return [(t, w) for t in self.tolerances for w in self.widths]


@dataclass
class SweepResult:
    method: str
    param_names: tuple[str, ...]
    rows: list[dict] = field(default_factory=list)

    def cell_table(self) -> dict[tuple[float, float], dict[str, float]]:
        out: dict = {}
        for r in self.rows:
            out.setdefault((r["tolerance"], r["width"]), {})[r["param"]] = r["mean_L1"]
        return out

    def failed_cells(self) -> set[tuple[float, float]]:
        return {(r["tolerance"], r["width"]) for r in self.rows if r["failed"]}

    def min_l1(self, param: str) -> float:
        vals = [r["mean_L1"] for r in self.rows if r["param"] == param and not r["failed"]]
        return min(vals) if vals else math.nan

    def argmin(self) -> dict:
        """Best cell per parameter and the best cell by the across-parameter mean."""
        failed = self.failed_cells()
        table = {k: v for k, v in self.cell_table().items() if k not in failed}
        if not table:
            return {"method": self.method, "all_failed": True}
        per = {}
        for p in self.param_names:
            cell = min(table, key=lambda c: table[c][p])
            per[p] = {"tolerance": cell[0], "width": cell[1], "mean_L1": table[cell][p]}
        best = min(table, key=lambda c: np.mean(list(table[c].values())))
        return {"method": self.method, "per_parameter": per,
                "overall": {"tolerance": best[0], "width": best[1],
                            "mean_L1": float(np.mean(list(table[best].values())))}}

    def write_csv(self, path, append: bool = False) -> None:
        cols = ["method", "n_params", "tolerance", "width", "param", "mean_L1", "n_failed"]
        with open(path, "a" if append else "w", newline="") as fh:
            w = csv.DictWriter(fh, cols, extrasaction="ignore", lineterminator="\n")
            if not append:
                w.writeheader()
            w.writerows(self.rows)


def _cell_seed(seed, cell, rep):
    return int(np.random.SeedSequence(seed, spawn_key=(cell, rep)).generate_state(1, np.uint64)[0])


def run_sweep(model, method: str, grid: SweepGrid, truth: Mapping[str, BinnedDensity], space: ParameterSpace,
              s_obs, pilot: PilotSet, projections: Mapping[str, LinearProjection] | None = None,
              seed: int = 0, threads: int = 1, start=None) -> SweepResult:
    """Run ``grid.replicates`` chains per (tolerance, width) cell and score
    each parameter's post-burn-in marginal against ``truth``.

    ABC-MCMC standardizes statistics by their pilot SD; ABC-PaSS uses the
    given projections. Chains start from the pilot row closest to
    ``s_obs`` unless ``start`` is given. A replicate without any accepted
    update is counted in ``n_failed`` and left out of the mean; a cell
    whose replicates all failed is excluded from the minimum.
    """
    if method not in ("abc-mcmc", "abc-pass"):
        raise ContractViolation(f"unknown method {method!r}")
    missing = set(space.names) - set(truth)
    if missing:
        raise ContractViolation(f"no truth for {sorted(missing)}")
    s_obs = np.asarray(s_obs, dtype=float)
    n = len(space)
    q = grid.tolerance_scale
    if method == "abc-mcmc":
        scale = pilot.stats.std(axis=0, ddof=1)
        z = (pilot.stats - s_obs) / scale
        d = np.sqrt(np.sum(z * z, axis=1))
        deltas = {f: float(np.quantile(d, f * q)) for f in grid.tolerances}
        best_row = int(np.argmin(d))
    else:
        if projections is None:
            raise ContractViolation("abc-pass sweep needs projections")
        D = projection_distances(pilot, projections, s_obs)
        deltas = {f: np.quantile(D, f * q, axis=0) for f in grid.tolerances}
        best_row = int(np.argmin(np.nansum(D, axis=1)))
    start = pilot.theta[best_row] if start is None else np.asarray(start, dtype=float)
    burn = int(grid.burn_in * grid.iterations)
    cells = grid.cells
    tasks = [(c, r) for c in range(len(cells)) for r in range(grid.replicates)]
    hists = np.zeros((len(cells), grid.replicates, n, grid.bins))
    ok = np.zeros((len(cells), grid.replicates), bool)
    for name, t in truth.items():
        i = space.index(name)
        if t.K != grid.bins or t.lo != space.lower[i] or t.hi != space.upper[i]:
            raise ContractViolation(f"truth for {name} must be binned on the prior support with {grid.bins} bins")

    def work(task):
        c, r = task
        f, w = cells[c]
        kernel = ProposalKernel.from_fractions(space, w)
        common = dict(space=space, T=grid.iterations, rng=_cell_seed(seed, c, r), start=start, record=False,
                      hist_bins=grid.bins, burn_in=burn)
        if method == "abc-mcmc":
            ch = run_abc_mcmc(model, s_obs, deltas[f], kernel, scale=scale, **common)
        else:
            ch = run_abc_pass(model, projections, s_obs, deltas[f], kernel, None, **common)
        hists[c, r] = ch.histogram
        ok[c, r] = ch.accepts.sum() > 0

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        list(pool.map(work, tasks))

    result = SweepResult(method, space.names)
    for c, (f, w) in enumerate(cells):
        n_failed = int((~ok[c]).sum())
        for i, name in enumerate(space.names):
            t = truth[name]
            l1 = [float(np.abs(h / h.sum() - t.masses).sum()) for h in hists[c, ok[c], i]]
            result.rows.append({"method": method, "n_params": n, "tolerance": f, "width": w, "param": name,
                                "mean_L1": float(np.mean(l1)) if l1 else math.nan, "n_failed": n_failed,
                                "failed": n_failed == grid.replicates})
    return result


def sweep_summary(results: Sequence[SweepResult], baseline: Mapping[str, float] | None = None) -> dict:
    out = {"argmin": [r.argmin() for r in results]}
    if baseline is not None:
        out["prior_baseline"] = dict(baseline)
    return out


def write_summary(summary: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2)

"""ABC-MCMC and ABC-PaSS samplers.

Both samplers emit exactly one record per iteration: when the simulated
statistics are too far from the observed ones, or the Metropolis-Hastings
step rejects, the current state is recorded again.

Models exposing ``compiled()`` on a box prior run inside numba kernels
(:mod:`abcpass._kernels`); everything else uses the pure-Python loop, which
draws one 64-bit seed per simulation from the chain's generator.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .errors import ContractViolation, SimulationError
from .model import ParameterSpace, ProposalKernel, prior_log_density, propose_component
from .statlearn import LinearProjection

MAX_CONSECUTIVE_FAILURES = _kernels.MAX_CONSECUTIVE_FAILURES


@dataclass(frozen=True)
class UpdateSchedule:
    """Probabilities of picking each parameter for a single-component update."""

    probs: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(x) for x in self.probs)
        if not p or min(p) <= 0 or abs(sum(p) - 1.0) > 1e-12:
            raise ContractViolation(f"schedule must be positive and sum to 1, got {p}")
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, n: int) -> "UpdateSchedule":
        return cls((1.0 / n,) * n)

    @classmethod
    def from_weights(cls, weights) -> "UpdateSchedule":
        w = np.asarray(weights, dtype=float)
        if np.any(w <= 0):
            raise ContractViolation("schedule weights must be > 0")
        p = w / w.sum()
        p[-1] = 1.0 - p[:-1].sum()
        return cls(tuple(p))

    @property
    def cumulative(self) -> np.ndarray:
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        return c

    def draw(self, rng: np.random.Generator) -> int:
        if len(self.probs) == 1:
            return 0
        return min(int(np.searchsorted(self.cumulative, rng.random(), side="right")), len(self.probs) - 1)


@dataclass
class Chain:
    """Recorded states plus per-parameter bookkeeping.

    ``records`` is ``(T, n)`` in working space, or ``None`` when only a
    post-burn-in histogram (``histogram``, ``(n, K)`` counts on the prior
    box) was requested.
    """

    param_names: tuple[str, ...]
    records: np.ndarray | None
    proposals: np.ndarray
    simulations: np.ndarray
    passes: np.ndarray
    accepts: np.ndarray
    fallbacks: np.ndarray
    sim_failures: int
    seed: int
    config: dict = field(default_factory=dict)
    histogram: np.ndarray | None = None
    iterations: int = 0

    def __post_init__(self):
        if self.records is not None:
            self.iterations = self.records.shape[0]

    @property
    def acceptance_rate(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.proposals > 0, self.accepts / np.maximum(self.proposals, 1), np.nan)

    def column(self, name: str) -> np.ndarray:
        return self.records[:, self.param_names.index(name)]

    def posterior(self, burn_in: float = 0.1) -> np.ndarray:
        """Records after discarding the first ``burn_in`` fraction."""
        return self.records[int(burn_in * self.records.shape[0]):]

    def to_csv(self, path) -> None:
        header = "iter," + ",".join(self.param_names)
        t = np.arange(1, self.records.shape[0] + 1)
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for k, row in zip(t, self.records):
                fh.write(str(k) + "," + ",".join(repr(float(x)) for x in row) + "\n")

    @staticmethod
    def read_csv(path) -> tuple[tuple[str, ...], np.ndarray]:
        with open(path) as fh:
            names = tuple(fh.readline().strip().split(",")[1:])
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return names, data[:, 1:]

    def diagnostics(self) -> dict:
        per = {}
        for j, name in enumerate(self.param_names):
            per[name] = {
                "proposals": int(self.proposals[j]),
                "simulations": int(self.simulations[j]),
                "distance_passes": int(self.passes[j]),
                "accepted": int(self.accepts[j]),
                "uniform_fallback_proposals": int(self.fallbacks[j]),
                "acceptance_rate": None if self.proposals[j] == 0 else float(self.accepts[j] / self.proposals[j]),
            }
        return {"iterations": self.iterations, "seed": int(self.seed), "simulation_failures": int(self.sim_failures),
                "parameters": per, "config": self.config}

    def write_diagnostics(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.diagnostics(), fh, indent=2, default=_jsonable)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"not JSON serializable: {type(x)}")


def standardized_distance(a, b, scale) -> float:
    """Euclidean distance between ``a`` and ``b`` after dividing each
    coordinate difference by ``scale``.

    Examples
    --------
    >>> standardized_distance([2, 2], [0, 0], [2, 2])
    1.4142135623730951
    """
    a, b, scale = (np.asarray(x, dtype=float) for x in (a, b, scale))
    if a.shape != b.shape or a.shape[-1:] != scale.shape:
        raise ContractViolation("statistics and scale lengths differ")
    if np.any(scale <= 0):
        raise ContractViolation("distance scales must be > 0")
    z = (a - b) / scale
    return float(np.sqrt(z @ z))


def mh_ratio(theta, theta_new, space: ParameterSpace, kernel: ProposalKernel | None = None) -> float:
    """``min(1, pi(theta') / pi(theta))``; the reflected kernel is symmetric
    so the proposal densities cancel."""
    lp = prior_log_density(space, theta)
    if lp == -math.inf:
        raise ContractViolation("current state has zero prior density")
    lp_new = prior_log_density(space, theta_new)
    if lp_new == -math.inf:
        return 0.0
    return min(1.0, math.exp(lp_new - lp))


def _seed_of(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63))
    return int(rng)


def _simulate(model, space, theta, rng, failures) -> np.ndarray:
    nat = space.to_natural(theta)
    for _ in range(MAX_CONSECUTIVE_FAILURES + 1):
        try:
            s = np.asarray(model.simulate(nat, int(rng.integers(0, 2**63))), dtype=float)
        except (SimulationError, ArithmeticError):
            s = None
        if s is not None and np.all(np.isfinite(s)):
            return s
        failures[0] += 1
    raise SimulationError(f"simulator failed more than {MAX_CONSECUTIVE_FAILURES} consecutive times")


class _Recorder:
    def __init__(self, T, n, record, hist_bins, burn_in, space):
        self.rec = np.empty((T if record else 0, n))
        self.hist = np.zeros((n, hist_bins), dtype=np.int64)
        self.burn = burn_in
        self.lo = np.array(space.lower, dtype=float)
        self.hi = np.array(space.upper, dtype=float)

    def __call__(self, t, theta):
        _kernels._record(t, theta, self.rec, self.burn, self.lo, self.hi, self.hist)


def _can_compile(model, space, use_compiled):
    if use_compiled is False or not hasattr(model, "compiled"):
        return False
    if not space.is_box:
        if use_compiled:
            raise ContractViolation("compiled kernels need box priors")
        return False
    return True


def _make_chain(space, rec, counts, failures, seed, config, hist_bins):
    return Chain(space.names, rec.rec if rec.rec.shape[0] else None, counts[0], counts[1], counts[2],
                 counts[3], counts[4], int(failures[0]), seed, config,
                 rec.hist if hist_bins else None, config["iterations"])


def run_abc_mcmc(model, s_obs, delta: float, kernel: ProposalKernel, space: ParameterSpace, T: int,
                 rng, start, scale=None, record: bool = True, hist_bins: int = 0, burn_in: int = 0,
                 use_compiled: bool | None = None) -> Chain:
    """Classic ABC-MCMC with full-vector proposals.

    Parameters
    ----------
    model : simulator
        Object with ``statistic_names`` and ``simulate(theta, seed)``.
    s_obs : array_like
        Observed statistics.
    delta : float
        Global tolerance on the standardized distance (``inf`` allowed).
    kernel : ProposalKernel
        Half-widths of the uniform proposal window per parameter.
    T : int
        Number of iterations (= records).
    rng : int or numpy.random.Generator
        Seed (or a generator from which one is drawn).
    start : array_like
        Initial state in working space; must have positive prior density.
    scale : array_like, optional
        Per-statistic SD used to standardize distances (default ones).
    record, hist_bins, burn_in
        Keep the full ``(T, n)`` trace and/or a ``hist_bins``-bin histogram
        per parameter of the states after ``burn_in`` iterations.
    """
    s_obs = np.asarray(s_obs, dtype=float)
    m = len(model.statistic_names)
    if s_obs.shape != (m,):
        raise ContractViolation(f"s_obs of length {s_obs.shape}, model emits {m} statistics")
    if not delta >= 0:
        raise ContractViolation("tolerance must be >= 0")
    scale = np.ones(m) if scale is None else np.asarray(scale, dtype=float)
    if np.any(scale <= 0):
        raise ContractViolation("distance scales must be > 0")
    theta = space.check(start).copy()
    if prior_log_density(space, theta) == -math.inf:
        raise ContractViolation("chain start has zero prior density")
    seed = _seed_of(rng)
    n = len(space)
    widths = kernel.array
    counts = np.zeros((5, n), dtype=np.int64)
    failures = np.zeros(1, dtype=np.int64)
    rec = _Recorder(T, n, record, hist_bins, burn_in, space)
    config = {"method": "abc-mcmc", "iterations": T, "delta": float(delta), "widths": widths.tolist(),
              "scale": scale.tolist(), "start": theta.tolist()}

    if _can_compile(model, space, use_compiled):
        sim, params = model.compiled()
        status = _kernels.abc_mcmc_kernel(
            sim, params, m, s_obs, scale, float(delta), widths, rec.lo, rec.hi, space.is_log.copy(), theta, T,
            _seed32(seed), rec.rec, burn_in, rec.lo, rec.hi, rec.hist, counts, failures)
        if status != _kernels.STATUS_OK:
            raise SimulationError(f"simulator failed more than {MAX_CONSECUTIVE_FAILURES} consecutive times")
        config["engine"] = "compiled"
        return _make_chain(space, rec, counts, failures, seed, config, hist_bins)

    gen = np.random.default_rng(seed)
    config["engine"] = "python"
    for t in range(T):
        prop = np.array([propose_component(theta[j], widths[j], space.lower[j], space.upper[j], gen.random())
                         for j in range(n)])
        counts[0] += 1
        counts[4] += widths > space.ranges
        h = mh_ratio(theta, prop, space)
        if h > 0:
            s = _simulate(model, space, prop, gen, failures)
            counts[1] += 1
            if standardized_distance(s, s_obs, scale) <= delta:
                counts[2] += 1
                if h >= 1.0 or gen.random() < h:
                    counts[3] += 1
                    theta = prop
        rec(t, theta)
    return _make_chain(space, rec, counts, failures, seed, config, hist_bins)


def _seed32(seed: int) -> int:
    return int(np.random.SeedSequence(seed).generate_state(1)[0])


def _projection_list(projections, space: ParameterSpace) -> list[LinearProjection | None]:
    if isinstance(projections, Mapping):
        out = [projections.get(name) for name in space.names]
    else:
        out = list(projections)
    if len(out) != len(space):
        raise ContractViolation("need one projection (or None for analytic hyper-parameters) per parameter")
    hyper = set(space.hyper_indices())
    for i, p in enumerate(out):
        if p is None and i not in hyper:
            raise ContractViolation(f"parameter {space.names[i]!r} has no projection and is not a hyper-parameter")
    return out


def run_abc_pass(model, projections, s_obs, deltas: Sequence[float], kernel: ProposalKernel,
                 schedule: UpdateSchedule | None, space: ParameterSpace, T: int, rng, start,
                 record: bool = True, hist_bins: int = 0, burn_in: int = 0,
                 use_compiled: bool | None = None) -> Chain:
    """ABC with parameter-specific statistics.

    Each iteration picks one parameter ``i`` from ``schedule``, moves only
    that component, and accepts when the standardized distance between the
    projected simulated statistics ``tau_i(s)`` and ``tau_i(s_obs)`` is at
    most ``deltas[i]`` and the Metropolis-Hastings step succeeds.
    Hyper-parameters of conditional priors (projection ``None``) are updated
    without simulation using the prior ratio alone.

    Parameters are as for :func:`run_abc_mcmc`; ``projections`` is either a
    mapping from parameter name or a sequence aligned with ``space``.
    """
    s_obs = np.asarray(s_obs, dtype=float)
    m = len(model.statistic_names)
    if s_obs.shape != (m,):
        raise ContractViolation(f"s_obs of length {s_obs.shape}, model emits {m} statistics")
    projs = _projection_list(projections, space)
    n = len(space)
    deltas = np.broadcast_to(np.asarray(deltas, dtype=float), (n,)).copy()
    if not np.all(deltas >= 0):
        raise ContractViolation("tolerances must be >= 0")
    schedule = schedule or UpdateSchedule.uniform(n)
    if len(schedule.probs) != n:
        raise ContractViolation("schedule length differs from the parameter count")
    theta = space.check(start).copy()
    if prior_log_density(space, theta) == -math.inf:
        raise ContractViolation("chain start has zero prior density")
    t_obs = [None if p is None else p.tau(s_obs) for p in projs]
    seed = _seed_of(rng)
    widths = kernel.array
    counts = np.zeros((5, n), dtype=np.int64)
    failures = np.zeros(1, dtype=np.int64)
    rec = _Recorder(T, n, record, hist_bins, burn_in, space)
    config = {"method": "abc-pass", "iterations": T, "deltas": deltas.tolist(), "widths": widths.tolist(),
              "schedule": list(schedule.probs), "start": theta.tolist()}

    if all(p is not None for p in projs) and _can_compile(model, space, use_compiled):
        transform = projs[0].transform
        if not all(_same_transform(p.transform, transform) for p in projs):
            raise ContractViolation("compiled kernels need one shared Box-Cox transform")
        beta = np.ascontiguousarray(np.vstack([p.beta for p in projs]))
        row_start = np.concatenate([[0], np.cumsum([p.rows for p in projs])]).astype(np.int64)
        tau_sd = np.concatenate([p.tau_sd for p in projs])
        t_cat = np.concatenate(t_obs)
        sim, params = model.compiled()
        status = _kernels.abc_pass_kernel(
            sim, params, m, beta, row_start, tau_sd, t_cat, deltas, transform.lam, transform.shift,
            transform.floor, transform.active, schedule.cumulative, widths, rec.lo, rec.hi,
            space.is_log.copy(), theta, T, _seed32(seed), rec.rec, burn_in, rec.lo, rec.hi, rec.hist,
            counts, failures)
        if status != _kernels.STATUS_OK:
            raise SimulationError(f"simulator failed more than {MAX_CONSECUTIVE_FAILURES} consecutive times")
        config["engine"] = "compiled"
        return _make_chain(space, rec, counts, failures, seed, config, hist_bins)

    gen = np.random.default_rng(seed)
    config["engine"] = "python"
    for t in range(T):
        i = schedule.draw(gen)
        prop = theta.copy()
        prop[i] = propose_component(theta[i], widths[i], space.lower[i], space.upper[i], gen.random())
        counts[0, i] += 1
        counts[4, i] += widths[i] > space.ranges[i]
        h = mh_ratio(theta, prop, space)
        p = projs[i]
        if p is None:
            counts[2, i] += 1
            if h > 0 and (h >= 1.0 or gen.random() < h):
                counts[3, i] += 1
                theta = prop
        elif h > 0:
            s = _simulate(model, space, prop, gen, failures)
            counts[1, i] += 1
            if p.distance(s, t_obs[i]) <= deltas[i]:
                counts[2, i] += 1
                if h >= 1.0 or gen.random() < h:
                    counts[3, i] += 1
                    theta = prop
        rec(t, theta)
    return _make_chain(space, rec, counts, failures, seed, config, hist_bins)


def _same_transform(a, b) -> bool:
    return all(np.array_equal(getattr(a, k), getattr(b, k)) for k in ("lam", "shift", "floor", "active"))

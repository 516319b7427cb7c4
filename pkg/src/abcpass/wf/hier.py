"""Joint inference of Ne, per-locus selection and the DFE hyper-parameters.

State: ``log10Ne``, optionally the GPD shape ``chi`` and ``log10sigma``, and
one selection coefficient per locus. Updates touch one component at a time:

* ``s_l``: simulate locus ``l`` only, accept on its projected statistic
  ``tau_s(F_l)``;
* ``log10Ne``: simulate every locus, accept on ``sum_l tau_Ne(F_l)``;
* ``chi`` / ``log10sigma``: no simulation, Metropolis-Hastings on the GPD
  likelihood of the current selection coefficients.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..calibration import CalibrationResult, calibrate_from_distances, warm_start_retry
from ..errors import ContractViolation
from ..model import ParameterDef, ParameterSpace, PriorSpec, propose_component
from ..sampler import Chain, UpdateSchedule
from ..statlearn import BoxCoxTransform, LinearProjection, PilotSet, apply_boxcox, fit_boxcox, learn_projection
from .gpd import GPDParams, gpd_logpdf, gpd_sample
from .sim import STAT_NAMES, LocusTrajectory, copies, pack_plans, simulate_stats_batch, stats_from_counts

log = logging.getLogger(__name__)

SIGNIFICANCE_THRESHOLD = 10.0
SIGNIFICANCE_LEVEL = 0.95


@dataclass(frozen=True)
class WFPriors:
    """Prior box of the WF model; ``s`` is used only without a DFE."""

    log10ne: tuple[float, float] = (1.5, 4.5)
    s: tuple[float, float] = (0.0, 1.0)
    dfe: bool = False
    chi: tuple[float, float] = (-0.2, 1.0)
    log10sigma: tuple[float, float] = (-2.5, -0.5)
    s_max: float = 1.0
    diploid: bool = False

    def names(self, L: int) -> tuple[str, ...]:
        hyper = ("chi", "log10sigma") if self.dfe else ()
        return ("log10Ne",) + hyper + tuple(f"s_{l + 1}" for l in range(L))

    def space(self, L: int) -> ParameterSpace:
        params = [ParameterDef("log10Ne", PriorSpec("log10-uniform", *self.log10ne), "log10")]
        if self.dfe:
            params += [ParameterDef("chi", PriorSpec("uniform", *self.chi)),
                       ParameterDef("log10sigma", PriorSpec("log10-uniform", *self.log10sigma), "log10")]
            s_prior = PriorSpec("gpd-conditional", 0.0, self.s_max, ("chi", "log10sigma"))
        else:
            s_prior = PriorSpec("uniform", *self.s)
        params += [ParameterDef(f"s_{l + 1}", s_prior) for l in range(L)]
        return ParameterSpace(tuple(params))

    @property
    def s_bounds(self) -> tuple[float, float]:
        return (0.0, self.s_max) if self.dfe else self.s


@dataclass(frozen=True)
class HierState:
    log10ne: float
    s: np.ndarray
    chi: float | None = None
    log10sigma: float | None = None

    def __post_init__(self):
        s = np.array(self.s, dtype=float)
        s.setflags(write=False)
        object.__setattr__(self, "s", s)

    @property
    def has_dfe(self) -> bool:
        return self.chi is not None

    def gpd(self, s_max: float = 1.0) -> GPDParams:
        return GPDParams(self.chi, 10.0 ** self.log10sigma, s_max)

    def vector(self) -> np.ndarray:
        hyper = [self.chi, self.log10sigma] if self.has_dfe else []
        return np.concatenate([[self.log10ne], hyper, self.s])

    @classmethod
    def from_vector(cls, x, dfe: bool) -> "HierState":
        x = np.asarray(x, dtype=float)
        if dfe:
            return cls(x[0], x[3:], x[1], x[2])
        return cls(x[0], x[1:])

    def with_s(self, l: int, value: float) -> "HierState":
        s = self.s.copy()
        s[l] = value
        return replace(self, s=s)


def gpd_log_likelihood(s, p: GPDParams) -> float:
    """Sum of truncated-GPD log densities; ``-inf`` if any value is outside the support."""
    s = np.asarray(s, dtype=float)
    if s.size == 0:
        return 0.0
    return float(np.sum(gpd_logpdf(s, p)))


def hyper_update(state: HierState, target: str, width: float, priors: WFPriors, rng) -> tuple[HierState, bool]:
    """Simulation-free Metropolis-Hastings update of ``chi`` or ``log10sigma``.

    The proposal is reflected into the prior box; both hyper-priors are flat
    in the proposal coordinates, so the acceptance ratio is the likelihood
    ratio of the current selection coefficients under the two GPDs.
    """
    if target not in ("chi", "log10sigma"):
        raise ContractViolation(f"unknown hyper-parameter {target!r}")
    lo, hi = getattr(priors, target)
    new = replace(state, **{target: propose_component(getattr(state, target), width, lo, hi, rng.random())})
    ll_new = gpd_log_likelihood(state.s, new.gpd(priors.s_max))
    if ll_new == -math.inf:
        return state, False
    ll_old = gpd_log_likelihood(state.s, state.gpd(priors.s_max))
    log_r = ll_new - ll_old
    if log_r >= 0 or rng.random() < math.exp(log_r):
        return new, True
    return state, False


def run_hyper_chain(s, priors: WFPriors, T: int, seed, widths=None, start=None) -> np.ndarray:
    """``(chi, log10sigma)`` chain given fixed selection coefficients.

    Each iteration updates one of the two at random; widths default to 10%
    of the prior ranges and the start to ``chi = max(0, midpoint)`` and the
    ``log10sigma`` midpoint. Returns the ``(T, 2)`` records.
    """
    if not priors.dfe:
        raise ContractViolation("hyper-parameter chain needs a DFE prior")
    rng = np.random.default_rng(seed)
    if widths is None:
        widths = (0.1 * (priors.chi[1] - priors.chi[0]), 0.1 * (priors.log10sigma[1] - priors.log10sigma[0]))
    if start is None:
        start = (max(0.0, 0.5 * sum(priors.chi)), 0.5 * sum(priors.log10sigma))
    state = HierState(0.0, s, *start)
    if gpd_log_likelihood(state.s, state.gpd(priors.s_max)) == -math.inf:
        raise ContractViolation("start has selection coefficients outside the GPD support")
    out = np.empty((T, 2))
    for t in range(T):
        j = int(rng.random() < 0.5)
        state, _ = hyper_update(state, ("chi", "log10sigma")[j], widths[j], priors, rng)
        out[t] = state.chi, state.log10sigma
    return out


def hyper_grid_posterior(s, priors: WFPriors, bins: int = 50, sub: int = 5) -> np.ndarray:
    """``(bins, bins)`` posterior masses of ``(chi, log10sigma)`` given fixed
    selection coefficients, integrated with ``sub x sub`` midpoints per bin."""
    k = bins * sub
    chi = priors.chi[0] + (np.arange(k) + 0.5) * (priors.chi[1] - priors.chi[0]) / k
    ls = priors.log10sigma[0] + (np.arange(k) + 0.5) * (priors.log10sigma[1] - priors.log10sigma[0]) / k
    ll = np.array([[gpd_log_likelihood(s, GPDParams(c, 10.0 ** l, priors.s_max)) for l in ls] for c in chi])
    w = np.exp(ll - ll.max())
    m = w.reshape(bins, sub, bins, sub).sum(axis=(1, 3))
    return m / m.sum()


def significance(log10ne, s_draws) -> tuple[np.ndarray, np.ndarray]:
    """Posterior probability of ``Ne * s_l > 10`` per locus and the flag
    ``probability > 0.95``.

    ``log10ne`` holds ``D`` draws; ``s_draws`` is ``(D,)`` or ``(D, L)``.
    """
    log10ne = np.asarray(log10ne, dtype=float)
    s_draws = np.asarray(s_draws, dtype=float)
    if s_draws.ndim == 1:
        s_draws = s_draws[:, None]
    if s_draws.shape[0] != log10ne.shape[0]:
        raise ContractViolation("need one Ne draw per selection draw")
    prob = np.mean(10.0 ** log10ne[:, None] * s_draws > SIGNIFICANCE_THRESHOLD, axis=0)
    return prob, prob > SIGNIFICANCE_LEVEL


@dataclass
class ObservedLoci:
    """Observed trajectories packed for the kernels.

    Counts are those of the focal allele, the one whose selection
    coefficient is inferred; they are used as given.
    """

    trajectories: list[LocusTrajectory]
    p0: np.ndarray
    gens: np.ndarray
    sizes: np.ndarray
    ntp: np.ndarray
    stats: np.ndarray

    @property
    def L(self) -> int:
        return len(self.trajectories)


def observe(trajectories) -> ObservedLoci:
    """Fix start frequencies and compute the observed statistics.

    The start frequency is the focal sample frequency at the first
    timepoint, kept inside ``[1/n, 1 - 1/n]`` of that sample.
    """
    trajectories = list(trajectories)
    if not trajectories:
        raise ContractViolation("no loci to analyse")
    p0 = []
    for t in trajectories:
        n0 = t.plan.sizes[0]
        p0.append(min(max(t.counts[0] / n0, 1.0 / n0), 1.0 - 1.0 / n0) if n0 > 1 else 0.5)
    gens, sizes, ntp = pack_plans([t.plan for t in trajectories])
    # same compiled code path as the simulator, so identical counts give identical statistics
    stats = np.zeros((len(trajectories), 5))
    for j, t in enumerate(trajectories):
        stats_from_counts(np.asarray(t.counts, dtype=np.int64), gens[j], sizes[j], ntp[j], stats[j])
    return ObservedLoci(trajectories, np.array(p0), gens, sizes, ntp, stats)


def _seed32(rng) -> int:
    return int(rng.integers(0, 2**32 - 1))


def simulate_loci(obs: ObservedLoci, log10ne, s, loci, seed: int, diploid: bool = False) -> np.ndarray:
    """Statistics ``(R, 5)`` for rows ``(log10ne[r], s[r], loci[r])``."""
    log10ne = np.broadcast_to(np.asarray(log10ne, dtype=float), np.shape(loci))
    N = np.array([copies(x, diploid) for x in log10ne], dtype=np.int64)
    out = np.empty((len(N), 5))
    simulate_stats_batch(seed, N, np.asarray(s, dtype=float), obs.p0, np.asarray(loci, dtype=np.int64),
                         obs.gens, obs.sizes, obs.ntp, out)
    return out


@dataclass
class WFProjections:
    """Projections for ``log10Ne`` and ``s`` learned on single-locus pilots,
    plus the observed projected statistics and their pilot SDs."""

    ne: LinearProjection
    s: LinearProjection
    t_obs_s: np.ndarray
    t_obs_ne: float
    sd_s: float
    sd_ne: float

    def to_json(self) -> dict:
        return {"log10Ne": self.ne.to_json(), "s": self.s.to_json(), "t_obs_s": self.t_obs_s.tolist(),
                "t_obs_ne": self.t_obs_ne, "sd_s": self.sd_s, "sd_ne": self.sd_ne}

    @classmethod
    def from_json(cls, d) -> "WFProjections":
        return cls(LinearProjection.from_json(d["log10Ne"]), LinearProjection.from_json(d["s"]),
                   np.asarray(d["t_obs_s"], dtype=float), d["t_obs_ne"], d["sd_s"], d["sd_ne"])

    def tau_s(self, F) -> np.ndarray:
        return self.s.tau(F)[..., 0]

    def tau_ne(self, F) -> float:
        """Sum of the per-locus ``log10Ne`` projections."""
        return float(np.sum(self.ne.tau(F)[..., 0], axis=-1))


@dataclass
class WFContext:
    obs: ObservedLoci
    priors: WFPriors
    proj: WFProjections

    @property
    def space(self) -> ParameterSpace:
        return self.priors.space(self.obs.L)


def s_update(state: HierState, l: int, width: float, ctx: WFContext, delta: float, rng) -> tuple[HierState, int]:
    """Update one selection coefficient.

    Returns the new state and how far the proposal got: 0 rejected by the
    prior, 1 simulated but too far, 2 within tolerance but rejected by the
    prior ratio, 3 accepted.
    """
    priors = ctx.priors
    lo, hi = priors.s_bounds
    new_s = propose_component(state.s[l], width, lo, hi, rng.random())
    log_r = 0.0
    if state.has_dfe:
        p = state.gpd(priors.s_max)
        lp_new = float(gpd_logpdf(new_s, p))
        if lp_new == -math.inf:
            return state, 0
        log_r = lp_new - float(gpd_logpdf(state.s[l], p))
    F = simulate_loci(ctx.obs, state.log10ne, [new_s], [l], _seed32(rng), priors.diploid)
    d = abs(ctx.proj.tau_s(F)[0] - ctx.proj.t_obs_s[l]) / ctx.proj.sd_s
    if d > delta:
        return state, 1
    if log_r >= 0 or rng.random() < math.exp(log_r):
        return state.with_s(l, new_s), 3
    return state, 2


def ne_update(state: HierState, width: float, ctx: WFContext, delta: float, rng) -> tuple[HierState, bool]:
    """Update ``log10Ne`` by simulating every locus at the proposed value."""
    lo, hi = ctx.priors.log10ne
    new = propose_component(state.log10ne, width, lo, hi, rng.random())
    L = ctx.obs.L
    F = simulate_loci(ctx.obs, new, state.s, np.arange(L), _seed32(rng), ctx.priors.diploid)
    d = abs(ctx.proj.tau_ne(F) - ctx.proj.t_obs_ne) / ctx.proj.sd_ne
    if d <= delta:
        return replace(state, log10ne=new), True
    return state, False


# -- pilots, learning and calibration -----------------------------------------------------------------

def _draw_prior(priors: WFPriors, L: int, rng) -> np.ndarray:
    x = [rng.uniform(*priors.log10ne)]
    if priors.dfe:
        chi, ls = rng.uniform(*priors.chi), rng.uniform(*priors.log10sigma)
        x += [chi, ls]
        x += list(np.atleast_1d(gpd_sample(GPDParams(chi, 10.0 ** ls, priors.s_max), rng, L)))
    else:
        x += list(rng.uniform(*priors.s, L))
    return np.array(x, dtype=float)


def single_locus_pilot(obs: ObservedLoci, priors: WFPriors, size: int, seed: int) -> PilotSet:
    """Single-locus simulations with ``(log10Ne, s)`` from the prior; each
    row uses the sampling plan and start frequency of a random observed
    locus."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(10,)))
    theta = np.stack([_draw_prior(priors, 1, rng) for _ in range(size)])
    theta = theta[:, [0, -1]]
    loci = rng.integers(0, obs.L, size)
    F = simulate_loci(obs, theta[:, 0], theta[:, 1], loci, _seed32(rng), priors.diploid)
    return PilotSet(("log10Ne", "s"), STAT_NAMES, theta, F)


def learn_wf_projections(pilot: PilotSet, obs: ObservedLoci, multi: np.ndarray | None = None,
                         ridge: float = 1e-8, method: str = "sufficient", boxcox: bool = True) -> WFProjections:
    """Box-Cox the single-locus pilot statistics and learn the ``log10Ne`` and
    ``s`` projections; the summed ``log10Ne`` statistic is standardized by
    its SD over ``multi`` (``(P, L, 5)`` multi-locus pilot statistics) when
    given, else by ``sqrt(L)`` times the single-locus SD."""
    transform = fit_boxcox(pilot) if boxcox else BoxCoxTransform.identity(len(pilot.stat_names))
    tp = pilot.with_stats(apply_boxcox(transform, pilot.stats))
    ne = learn_projection(tp, "log10Ne", ridge=ridge, method=method, transform=transform)
    s = learn_projection(tp, "s", ridge=ridge, method=method, transform=transform)
    t_obs_s = s.tau(obs.stats)[:, 0]
    t_obs_ne = float(ne.tau(obs.stats)[:, 0].sum())
    if multi is not None:
        sd_ne = float(np.std(ne.tau(multi)[..., 0].sum(axis=1), ddof=1))
    else:
        sd_ne = float(ne.tau_sd[0] * math.sqrt(obs.L))
    return WFProjections(ne, s, t_obs_s, t_obs_ne, float(s.tau_sd[0]), sd_ne)


def multi_locus_pilot(obs: ObservedLoci, priors: WFPriors, size: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Full-model prior simulations: ``theta (P, n)`` and statistics ``(P, L, 5)``."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(11,)))
    L = obs.L
    theta = np.stack([_draw_prior(priors, L, rng) for _ in range(size)])
    s = theta[:, -L:]
    loci = np.tile(np.arange(L), size)
    F = simulate_loci(obs, np.repeat(theta[:, 0], L), s.ravel(), loci, _seed32(rng), priors.diploid)
    return theta, F.reshape(size, L, 5)


def calibrate_wf(ctx: WFContext, theta: np.ndarray, F: np.ndarray, retain: float = 0.01) -> CalibrationResult:
    """Tolerances and widths from the multi-locus pilot; each parameter
    starts at its own closest pilot value, hyper-parameters at
    ``chi = max(0, prior midpoint)`` and the ``log10sigma`` midpoint."""
    priors, proj = ctx.priors, ctx.proj
    L = ctx.obs.L
    names = priors.names(L)
    D = np.full((theta.shape[0], len(names)), np.nan)
    D[:, 0] = np.abs(proj.ne.tau(F)[..., 0].sum(axis=1) - proj.t_obs_ne) / proj.sd_ne
    D[:, -L:] = np.abs(proj.s.tau(F)[..., 0] - proj.t_obs_s) / proj.sd_s
    cal = calibrate_from_distances(names, theta, D, retain, ctx.space, per_parameter_start=True)
    if priors.dfe:
        cal.start[1] = max(0.0, 0.5 * sum(priors.chi))
        cal.start[2] = 0.5 * sum(priors.log10sigma)
    return cal


# -- the chain ------------------------------------------------------------------------------------------

def default_schedule(priors: WFPriors, L: int, hyper_weight: float = 5.0) -> UpdateSchedule:
    w = [1.0] + ([hyper_weight, hyper_weight] if priors.dfe else []) + [1.0] * L
    return UpdateSchedule.from_weights(w)


def run_wf_chain(ctx: WFContext, start, widths, deltas, T: int, seed: int,
                 schedule: UpdateSchedule | None = None, record: bool = True, thin: int = 1) -> Chain:
    """Run ``T`` single-component updates; records every ``thin``-th state."""
    priors = ctx.priors
    L = ctx.obs.L
    names = priors.names(L)
    n = len(names)
    widths = np.asarray(widths, dtype=float)
    deltas = np.asarray(deltas, dtype=float)
    schedule = schedule or default_schedule(priors, L)
    if len(schedule.probs) != n:
        raise ContractViolation("schedule length differs from the parameter count")
    state = HierState.from_vector(start, priors.dfe)
    if priors.dfe and gpd_log_likelihood(state.s, state.gpd(priors.s_max)) == -math.inf:
        raise ContractViolation("start has selection coefficients outside the GPD support")
    rng = np.random.default_rng(seed)
    off = 3 if priors.dfe else 1
    counts = np.zeros((5, n), dtype=np.int64)
    ranges = ctx.space.ranges
    rec = np.empty((T // thin if record else 0, n))
    for t in range(T):
        i = schedule.draw(rng)
        counts[0, i] += 1
        counts[4, i] += widths[i] > ranges[i]
        if i == 0:
            state, ok = ne_update(state, widths[0], ctx, deltas[0], rng)
            counts[1, 0] += 1
            counts[2, 0] += ok
        elif i < off:
            state, ok = hyper_update(state, names[i], widths[i], priors, rng)
            counts[2, i] += 1
        else:
            state, stage = s_update(state, i - off, widths[i], ctx, deltas[i], rng)
            counts[1, i] += stage >= 1
            counts[2, i] += stage >= 2
            ok = stage == 3
        counts[3, i] += ok
        if record and (t + 1) % thin == 0:
            rec[(t + 1) // thin - 1] = state.vector()
    config = {"method": "abc-pass-wf", "iterations": T, "deltas": deltas.tolist(), "widths": widths.tolist(),
              "schedule": list(schedule.probs), "start": np.asarray(start, dtype=float).tolist(), "thin": thin}
    chain = Chain(names, rec if record else None, counts[0], counts[1], counts[2], counts[3], counts[4], 0,
                  seed, config)
    chain.iterations = T
    chain.final_state = state
    return chain


@dataclass
class WFResult:
    chain: Chain
    context: WFContext
    calibration: CalibrationResult
    start: np.ndarray
    burn_in: float = 0.1
    loci: list = field(default_factory=list)

    def posterior(self) -> np.ndarray:
        return self.chain.posterior(self.burn_in)

    def medians(self) -> dict[str, float]:
        post = self.posterior()
        return {name: float(np.median(post[:, j])) for j, name in enumerate(self.chain.param_names)}

    def significance(self):
        post = self.posterior()
        L = self.context.obs.L
        return significance(post[:, 0], post[:, -L:])


def infer_wf(trajectories, priors: WFPriors, seed: int, iterations_per_param: int = 100_000,
             pilot_size: int = 10_000, retain: float = 0.01, probe_iters: int = 1000, max_rounds: int = 50,
             hyper_weight: float = 5.0, thin: int = 1, ridge: float = 1e-8, method: str = "sufficient",
             burn_in: float = 0.1, boxcox: bool = True) -> WFResult:
    """Pilot, learn, calibrate, warm-start and run the joint chain.

    ``probe_iters`` and ``iterations_per_param`` are both multiplied by the
    number of parameters.
    """
    obs = observe(trajectories)
    pilot = single_locus_pilot(obs, priors, pilot_size, seed)
    theta, F = multi_locus_pilot(obs, priors, pilot_size, seed)
    proj = learn_wf_projections(pilot, obs, F, ridge=ridge, method=method, boxcox=boxcox)
    ctx = WFContext(obs, priors, proj)
    cal = calibrate_wf(ctx, theta, F, retain)
    schedule = default_schedule(priors, obs.L, hyper_weight)
    ss = np.random.SeedSequence(seed, spawn_key=(12,))
    warm_rng, chain_seed = np.random.default_rng(ss.spawn(1)[0]), int(ss.generate_state(1, np.uint64)[0])

    def probe(start, iters, s):
        return run_wf_chain(ctx, start, cal.widths, cal.deltas, iters, s, schedule, record=False)

    n = len(priors.names(obs.L))
    # probes are budgeted per parameter, like the chain itself
    start = warm_start_retry(probe, cal, theta, warm_rng, probe_iters * n, max_rounds)
    chain = run_wf_chain(ctx, start, cal.widths, cal.deltas, iterations_per_param * n, chain_seed, schedule,
                         thin=thin)
    log.info("WF chain done: acceptance %s", np.round(chain.acceptance_rate, 3).tolist())
    return WFResult(chain, ctx, cal, start, burn_in)

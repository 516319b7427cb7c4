"""Pilot -> learn -> calibrate -> run orchestration with resumable artifacts.

Every artifact in the output directory is recorded in ``stamps.json``
with a digest of the configuration it depends on. A stage whose artifact
exists with a matching stamp is loaded instead of recomputed; any change
upstream changes the digest and forces a recompute.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .calibration import CalibrationResult, calibrate, calibrate_global, warm_start_retry
from .config import RunConfig
from .errors import AbcError, ConfigError
from .io import TrajectoryDataset, ingest_trajectories
from .model import ParameterDef, ParameterSpace, PriorSpec, ProposalKernel
from .models import BinomialCheckModel, GLMModel, NormalModel
from .sampler import Chain, UpdateSchedule, run_abc_mcmc, run_abc_pass
from .statlearn import PilotSet, generate_pilot, learn_projections, load_projections, save_projections
from .validate import (BinnedDensity, SweepGrid, glm_posterior, normal_posterior, prior_baseline, run_sweep,
                       sweep_summary, write_summary)
from .wf import hier

log = logging.getLogger(__name__)

PILOT, PROJECTIONS, CALIBRATION, CHAIN, DIAGNOSTICS = (
    "pilot.csv", "projections.json", "calibration.json", "chain.csv", "diagnostics.json")


class StageError(AbcError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _digest(*parts) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True, default=str).encode()).hexdigest()[:16]


class Artifacts:
    """Output directory with per-file stamps."""

    def __init__(self, out):
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._stamp_file = self.dir / "stamps.json"
        self.stamps = json.loads(self._stamp_file.read_text()) if self._stamp_file.exists() else {}

    def path(self, name: str) -> Path:
        return self.dir / name

    def fresh(self, name: str, stamp: str) -> bool:
        return self.path(name).exists() and self.stamps.get(name) == stamp

    def mark(self, name: str, stamp: str) -> None:
        self.stamps[name] = stamp
        self._stamp_file.write_text(json.dumps(self.stamps, indent=2, sort_keys=True))


def _stage(name):
    def wrap(fn):
        def inner(*a, **kw):
            try:
                return fn(*a, **kw)
            except (StageError, ConfigError):
                raise
            except (AbcError, ArithmeticError, ValueError) as e:
                raise StageError(name, e) from e
        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        return inner
    return wrap


def stage_seed(seed: int, stage: int) -> int:
    """Independent per-stage seed derived from the run seed."""
    return int(np.random.SeedSequence(seed, spawn_key=(100 + stage,)).generate_state(1, np.uint64)[0])


# -- toy models -----------------------------------------------------------------------------------------

def build_model(cfg: RunConfig):
    """``(model, space, s_obs)`` for a toy-model config."""
    m = cfg.model
    if m.kind == "normal":
        model, space = NormalModel(m.n), NormalModel.default_space()
    elif m.kind == "glm":
        model = GLMModel.cyclic(m.n)
        space = model.default_space()
    elif m.kind == "binomial":
        model, space = BinomialCheckModel(m.N), BinomialCheckModel.default_space()
    else:
        raise ConfigError("model.kind = 'wf' runs through the wf-infer pipeline")
    if cfg.parameters is not None:
        given = {p.name: p for p in cfg.parameters}
        unknown = set(given) - set(space.names)
        if unknown:
            raise ConfigError(f"parameters not in the {m.kind} model: {sorted(unknown)}")
        defs = []
        for d in space.params:
            p = given.get(d.name)
            if p is None:
                defs.append(d)
            else:
                defs.append(ParameterDef(d.name, PriorSpec(p.prior, p.lower, p.upper),
                                         "log10" if p.prior == "log10-uniform" else "linear"))
        space = ParameterSpace(tuple(defs))
    if m.observed is None:
        raise ConfigError("model.observed (observed statistics) is required")
    s_obs = np.asarray(m.observed, dtype=float)
    if s_obs.shape != (len(model.statistic_names),):
        raise ConfigError(f"model.observed needs {len(model.statistic_names)} values "
                          f"({', '.join(model.statistic_names)})")
    sched = cfg.method.schedule
    if sched is not None and len(sched) != len(space):
        raise ConfigError(f"method.schedule has {len(sched)} weights for {len(space)} parameters")
    return model, space, s_obs


def _stamps(cfg: RunConfig) -> dict[str, str]:
    d = cfg.model_dump(mode="json")
    meth = d["method"]
    pilot = _digest(cfg.seed, d["model"], d["parameters"], meth["pilot_size"])
    learn = _digest(pilot, meth["boxcox"], meth["ridge"], meth["projection"])
    cal = _digest(learn, meth["name"], meth["retain"])
    run = _digest(cal, meth["iterations"], meth["burn_in"], meth["probe_iters"], meth["max_rounds"],
                  meth["schedule"], meth["thin"])
    return {PILOT: pilot, PROJECTIONS: learn, CALIBRATION: cal, CHAIN: run}


@_stage("pilot")
def stage_pilot(cfg: RunConfig, art: Artifacts, threads: int = 1) -> PilotSet:
    model, space, _ = build_model(cfg)
    stamp = _stamps(cfg)[PILOT]
    if art.fresh(PILOT, stamp):
        log.info("reusing %s", art.path(PILOT))
        return PilotSet.from_csv(art.path(PILOT), len(space))
    pilot = generate_pilot(model, space, cfg.method.pilot_size, stage_seed(cfg.seed, 0), threads)
    pilot.to_csv(art.path(PILOT))
    art.mark(PILOT, stamp)
    return pilot


@_stage("learn")
def stage_learn(cfg: RunConfig, art: Artifacts, pilot: PilotSet) -> dict:
    stamp = _stamps(cfg)[PROJECTIONS]
    if art.fresh(PROJECTIONS, stamp):
        return load_projections(art.path(PROJECTIONS))
    m = cfg.method
    proj = learn_projections(pilot, boxcox=m.boxcox, ridge=m.ridge, method=m.projection)
    save_projections(proj, art.path(PROJECTIONS))
    art.mark(PROJECTIONS, stamp)
    return proj


@_stage("calibrate")
def stage_calibrate(cfg: RunConfig, art: Artifacts, pilot: PilotSet, projections) -> CalibrationResult:
    stamp = _stamps(cfg)[CALIBRATION]
    if art.fresh(CALIBRATION, stamp):
        return CalibrationResult.load(art.path(CALIBRATION))
    _, space, s_obs = build_model(cfg)
    if cfg.method.name == "abc-pass":
        cal = calibrate(pilot, projections, s_obs, cfg.method.retain, space)
    else:
        cal = calibrate_global(pilot, s_obs, pilot.stats.std(axis=0, ddof=1), cfg.method.retain, space)
    cal.save(art.path(CALIBRATION))
    art.mark(CALIBRATION, stamp)
    return cal


def _runner(cfg, model, space, s_obs, pilot, projections, cal):
    kernel = ProposalKernel(tuple(cal.widths))
    if cfg.method.name == "abc-pass":
        w = cfg.method.schedule
        schedule = UpdateSchedule.from_weights(w) if w else UpdateSchedule.uniform(len(space))

        def run(start, T, seed, record=False):
            return run_abc_pass(model, projections, s_obs, cal.deltas, kernel, schedule, space, T, seed, start,
                                record=record)
    else:
        scale = pilot.stats.std(axis=0, ddof=1)

        def run(start, T, seed, record=False):
            return run_abc_mcmc(model, s_obs, float(cal.deltas[0]), kernel, space, T, seed, start, scale,
                                record=record)
    return run


@_stage("run")
def stage_run(cfg: RunConfig, art: Artifacts, pilot: PilotSet, projections, cal: CalibrationResult) -> Chain | None:
    """Warm start and the main chain; ``None`` when ``iterations == 0``."""
    T = cfg.method.iterations
    if T == 0:
        return None
    model, space, s_obs = build_model(cfg)
    run = _runner(cfg, model, space, s_obs, pilot, projections, cal)
    start = warm_start_retry(run, cal, pilot, stage_seed(cfg.seed, 1), cfg.method.probe_iters, cfg.method.max_rounds)
    chain = run(start, T, stage_seed(cfg.seed, 2), record=True)
    if cfg.method.thin > 1:
        chain.records = chain.records[cfg.method.thin - 1::cfg.method.thin]
    chain.config.update({"method": cfg.method.name, "model": cfg.model.kind, "start": start.tolist(),
                         "deltas": [x if math.isfinite(x) else "inf" for x in cal.deltas.tolist()],
                         "widths": cal.widths.tolist()})
    chain.to_csv(art.path(CHAIN))
    chain.write_diagnostics(art.path(DIAGNOSTICS))
    art.mark(CHAIN, _stamps(cfg)[CHAIN])
    return chain


def run_pipeline(cfg: RunConfig, upto: str = "run", threads: int = 1):
    """Run the toy-model pipeline up to stage ``upto``; returns the last product."""
    order = ("pilot", "learn", "calibrate", "run")
    if upto not in order:
        raise ConfigError(f"unknown stage {upto!r}")
    art = Artifacts(cfg.out)
    pilot = stage_pilot(cfg, art, threads)
    if upto == "pilot":
        return pilot
    projections = stage_learn(cfg, art, pilot) if cfg.method.name == "abc-pass" or upto == "learn" else None
    if upto == "learn":
        return projections
    cal = stage_calibrate(cfg, art, pilot, projections)
    if upto == "calibrate":
        return cal
    return stage_run(cfg, art, pilot, projections, cal)


# -- sweep ------------------------------------------------------------------------------------------------

def truth_for(cfg: RunConfig, model, space, s_obs, K: int) -> dict[str, BinnedDensity]:
    """Analytic binned marginals on the prior supports."""
    kind = cfg.model.kind
    if kind == "normal":
        return normal_posterior(s_obs[0], s_obs[1], cfg.model.n).marginals(space, K)
    if kind == "glm":
        return glm_posterior(model.C, s_obs).marginals(space, K)
    if kind == "binomial":
        from scipy import stats
        k = s_obs[0]
        d = stats.beta(k + 1, cfg.model.N - k + 1)
        lo, hi = space.lower[0], space.upper[0]
        return {space.names[0]: BinnedDensity.from_cdf(d.cdf, lo, hi, K)}
    raise ConfigError(f"no analytic posterior for model {kind!r}")


@_stage("sweep")
def stage_sweep(cfg: RunConfig, threads: int = 1) -> dict:
    model, space, s_obs = build_model(cfg)
    sw = cfg.sweep
    grid = SweepGrid(tuple(sw.tolerances), tuple(sw.widths), sw.replicates, sw.iterations, cfg.method.burn_in,
                     sw.bins, sw.tolerance_scale)
    art = Artifacts(cfg.out)
    pilot = stage_pilot(cfg, art, threads)
    truth = truth_for(cfg, model, space, s_obs, sw.bins)
    results = []
    path = art.path("sweep.csv")
    for j, method in enumerate(sw.methods):
        proj = None
        if method == "abc-pass":
            m = cfg.method
            proj = learn_projections(pilot, boxcox=m.boxcox, ridge=m.ridge, method=m.projection)
        res = run_sweep(model, method, grid, truth, space, s_obs, pilot, proj, stage_seed(cfg.seed, 10 + j), threads)
        res.write_csv(path, append=j > 0)
        results.append(res)
    summary = sweep_summary(results, prior_baseline(truth))
    write_summary(summary, art.path("sweep_summary.json"))
    return summary


# -- Wright-Fisher ------------------------------------------------------------------------------------------

WF_PILOT, WF_MULTI, WF_SIGNIFICANCE = "pilot.csv", "pilot_multi.npz", "significance.csv"


def wf_priors(cfg: RunConfig) -> hier.WFPriors:
    return hier.WFPriors(tuple(cfg.wf.log10ne), tuple(cfg.wf.s), cfg.dfe.enabled, tuple(cfg.dfe.chi),
                         tuple(cfg.dfe.log10sigma), cfg.dfe.s_max, cfg.model.diploid)


def wf_dataset(cfg: RunConfig) -> TrajectoryDataset:
    m = cfg.model
    return ingest_trajectories(m.data, m.min_freq, m.min_timepoints, m.last_timepoints)


def _wf_stamps(cfg: RunConfig, data_digest: str) -> dict[str, str]:
    d = cfg.model_dump(mode="json")
    meth = d["method"]
    pilot = _digest(cfg.seed, d["model"], d["wf"], d["dfe"], meth["pilot_size"], data_digest)
    learn = _digest(pilot, meth["ridge"], meth["projection"])
    cal = _digest(learn, meth["retain"])
    run = _digest(cal, meth["iterations"], meth["probe_iters"], meth["max_rounds"], meth["thin"], meth["burn_in"])
    return {WF_PILOT: pilot, WF_MULTI: pilot, PROJECTIONS: learn, CALIBRATION: cal, CHAIN: run}


@dataclass
class WFRun:
    dataset: TrajectoryDataset
    context: hier.WFContext
    calibration: CalibrationResult
    chain: Chain | None
    significance: list | None


@_stage("wf-infer")
def run_wf_pipeline(cfg: RunConfig) -> WFRun:
    if cfg.model.kind != "wf":
        raise ConfigError("wf-infer needs model.kind = 'wf'")
    data = wf_dataset(cfg)
    priors = wf_priors(cfg)
    obs = hier.observe(data.trajectories)
    art = Artifacts(cfg.out)
    stamps = _wf_stamps(cfg, hashlib.sha256(Path(cfg.model.data).read_bytes()).hexdigest())
    meth = cfg.method
    seed = stage_seed(cfg.seed, 0)

    if art.fresh(WF_PILOT, stamps[WF_PILOT]) and art.fresh(WF_MULTI, stamps[WF_MULTI]):
        pilot = PilotSet.from_csv(art.path(WF_PILOT), 2)
        with np.load(art.path(WF_MULTI)) as z:
            theta, F = z["theta"], z["stats"]
    else:
        pilot = hier.single_locus_pilot(obs, priors, meth.pilot_size, seed)
        theta, F = hier.multi_locus_pilot(obs, priors, meth.pilot_size, seed)
        pilot.to_csv(art.path(WF_PILOT))
        np.savez(art.path(WF_MULTI), theta=theta, stats=F)
        art.mark(WF_PILOT, stamps[WF_PILOT])
        art.mark(WF_MULTI, stamps[WF_MULTI])

    if art.fresh(PROJECTIONS, stamps[PROJECTIONS]):
        proj = hier.WFProjections.from_json(json.loads(art.path(PROJECTIONS).read_text()))
    else:
        proj = hier.learn_wf_projections(pilot, obs, F, ridge=meth.ridge, method=meth.projection)
        art.path(PROJECTIONS).write_text(json.dumps(proj.to_json(), indent=2))
        art.mark(PROJECTIONS, stamps[PROJECTIONS])
    ctx = hier.WFContext(obs, priors, proj)

    if art.fresh(CALIBRATION, stamps[CALIBRATION]):
        cal = CalibrationResult.load(art.path(CALIBRATION))
    else:
        cal = hier.calibrate_wf(ctx, theta, F, meth.retain)
        cal.save(art.path(CALIBRATION))
        art.mark(CALIBRATION, stamps[CALIBRATION])

    if meth.iterations == 0:
        return WFRun(data, ctx, cal, None, None)
    schedule = hier.default_schedule(priors, obs.L, cfg.wf.hyper_weight)
    if meth.schedule is not None:
        if len(meth.schedule) != len(priors.names(obs.L)):
            raise ConfigError(f"method.schedule needs {len(priors.names(obs.L))} weights")
        schedule = UpdateSchedule.from_weights(meth.schedule)

    def probe(start, iters, s):
        return hier.run_wf_chain(ctx, start, cal.widths, cal.deltas, iters, s, schedule, record=False)

    n = len(priors.names(obs.L))
    start = warm_start_retry(probe, cal, theta, stage_seed(cfg.seed, 1), meth.probe_iters * n, meth.max_rounds)
    chain = hier.run_wf_chain(ctx, start, cal.widths, cal.deltas, meth.iterations * n, stage_seed(cfg.seed, 2),
                              schedule, thin=meth.thin)
    chain.to_csv(art.path(CHAIN))
    chain.write_diagnostics(art.path(DIAGNOSTICS))
    art.mark(CHAIN, stamps[CHAIN])
    post = chain.posterior(meth.burn_in)
    prob, flag = hier.significance(post[:, 0], post[:, -obs.L:])
    rows = [(d.locus, d.pos, float(p), bool(f)) for d, p, f in zip(data.loci, prob, flag)]
    write_significance(rows, art.path(WF_SIGNIFICANCE))
    return WFRun(data, ctx, cal, chain, rows)


def write_significance(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["locus", "pos", "P_Nes_gt_10", "significant"])
        for locus, pos, p, f in rows:
            w.writerow([locus, pos, repr(p), str(f).lower()])


# -- reporting ----------------------------------------------------------------------------------------------

REPORT_COLUMNS = ("param", "median", "mean", "q2.5", "q97.5")


def report_posteriors(names, records, burn_in: float = 0.1) -> dict:
    """Per-parameter median, mean and central 95% interval after burn-in.

    When the columns look like a WF chain (``log10Ne`` and ``s_1..``), the
    result also has ``significance``: per-locus ``(P(Ne*s > 10), flag)``.
    """
    records = np.asarray(records, dtype=float)
    post = records[int(burn_in * records.shape[0]):]
    if post.shape[0] == 0:
        raise ConfigError("no draws left after burn-in")
    table = []
    for j, name in enumerate(names):
        x = post[:, j]
        lo, med, hi = np.quantile(x, [0.025, 0.5, 0.975])
        table.append((name, float(med), float(x.mean()), float(lo), float(hi)))
    out = {"table": table}
    s_cols = [j for j, n in enumerate(names) if n.startswith("s_")]
    if "log10Ne" in names and s_cols:
        prob, flag = hier.significance(post[:, list(names).index("log10Ne")], post[:, s_cols])
        out["significance"] = [(names[j], float(p), bool(f)) for j, p, f in zip(s_cols, prob, flag)]
    return out


def write_report(report: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for row in report["table"]:
            w.writerow([row[0]] + [repr(x) for x in row[1:]])

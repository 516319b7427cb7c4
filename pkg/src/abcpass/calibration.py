"""Tolerances, proposal widths and chain start from retained pilot rows."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .errors import CalibrationError, ContractViolation
from .model import ParameterSpace
from .statlearn import LinearProjection, PilotSet

WIDTH_FALLBACK = 0.01
HYPER_WIDTH_FALLBACK = 0.10


@dataclass
class CalibrationResult:
    param_names: tuple[str, ...]
    deltas: np.ndarray
    widths: np.ndarray
    start: np.ndarray
    start_row: int
    retained: dict[str, np.ndarray]
    width_fallback: np.ndarray
    analytic: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))

    def __post_init__(self):
        self.param_names = tuple(self.param_names)
        self.deltas = np.asarray(self.deltas, dtype=float)
        self.widths = np.asarray(self.widths, dtype=float)
        self.start = np.asarray(self.start, dtype=float)
        self.width_fallback = np.asarray(self.width_fallback, dtype=bool)
        if self.analytic.shape[0] == 0:
            self.analytic = np.zeros(len(self.param_names), bool)
        self.retained = {k: np.asarray(v, dtype=np.int64) for k, v in self.retained.items()}

    def to_json(self) -> dict:
        d = {k: v.tolist() if isinstance(v, np.ndarray) else v for k, v in asdict(self).items()}
        d["retained"] = {k: v.tolist() for k, v in self.retained.items()}
        d["deltas"] = [x if math.isfinite(x) else "inf" for x in self.deltas.tolist()]
        return d

    @classmethod
    def from_json(cls, d) -> "CalibrationResult":
        d = dict(d)
        d["deltas"] = [float(x) for x in d["deltas"]]
        d["analytic"] = np.asarray(d.get("analytic", []), dtype=bool)
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path) -> "CalibrationResult":
        return cls.from_json(json.loads(Path(path).read_text()))


def projection_distances(pilot: PilotSet, projections: Mapping[str, LinearProjection], s_obs) -> np.ndarray:
    """``(P, n)`` standardized distances ``|tau_i(s) - tau_i(s_obs)| / sd(tau_i)``;
    NaN columns for parameters without a projection."""
    s_obs = np.asarray(s_obs, dtype=float)
    D = np.full((len(pilot), len(pilot.param_names)), np.nan)
    for i, name in enumerate(pilot.param_names):
        p = projections.get(name)
        if p is not None:
            D[:, i] = p.distance(pilot.stats, p.tau(s_obs))
    return D


def _n_keep(retain, P):
    if not 0 < retain <= 1:
        raise ContractViolation(f"retain fraction must lie in (0, 1], got {retain}")
    return max(1, min(P, math.ceil(retain * P - 1e-9)))


def _width(values, space, i):
    sd = values.std(ddof=1) if len(values) > 1 else 0.0
    if sd > 0:
        return 0.5 * sd, False
    return WIDTH_FALLBACK * space.ranges[i], True


def calibrate(pilot: PilotSet, projections: Mapping[str, LinearProjection], s_obs, retain: float = 0.01,
              space: ParameterSpace | None = None) -> CalibrationResult:
    """Per-parameter calibration from the retained fraction of pilot rows.

    For each parameter with a projection, the ``ceil(retain * P)`` pilot
    rows closest in projected distance are retained; the tolerance is the
    largest retained distance and the proposal half-width is half the SD
    of the retained parameter values (1% of the prior range when that SD
    is zero). Parameters without a projection (hyper-parameters updated
    analytically) get an infinite tolerance and 10% of the prior range.
    The chain starts at the pilot row with the smallest summed distance.
    """
    if len(pilot) == 0:
        raise ContractViolation("empty pilot set")
    D = projection_distances(pilot, projections, s_obs)
    return calibrate_from_distances(pilot.param_names, pilot.theta, D, retain, space)


def _pilot_box(names, theta):
    return ParameterSpace.uniform({k: (lo, hi) for k, lo, hi in zip(names, theta.min(0), theta.max(0))})


def calibrate_from_distances(names, theta, D, retain: float = 0.01, space: ParameterSpace | None = None,
                             per_parameter_start: bool = False) -> CalibrationResult:
    """Calibration from a precomputed ``(P, n)`` distance matrix.

    NaN columns mark analytically updated parameters. With
    ``per_parameter_start`` each component starts at the value of its own
    closest pilot row instead of one jointly closest row (analytic
    components then start at the joint row's value).
    """
    theta = np.asarray(theta, dtype=float)
    D = np.asarray(D, dtype=float)
    if theta.shape[0] == 0:
        raise ContractViolation("empty pilot set")
    space = space or _pilot_box(names, theta)
    k = _n_keep(retain, theta.shape[0])
    n = len(names)
    deltas = np.full(n, math.inf)
    widths = np.empty(n)
    fallback = np.zeros(n, bool)
    analytic = np.all(np.isnan(D), axis=0)
    retained = {}
    row = int(np.argmin(np.nansum(D, axis=1)))
    start = theta[row].copy()
    for i, name in enumerate(names):
        if analytic[i]:
            widths[i] = HYPER_WIDTH_FALLBACK * space.ranges[i]
            fallback[i] = True
            continue
        keep = np.argsort(D[:, i], kind="stable")[:k]
        retained[name] = keep
        deltas[i] = D[keep, i].max()
        widths[i], fallback[i] = _width(theta[keep, i], space, i)
        if per_parameter_start:
            start[i] = theta[keep[0], i]
    return CalibrationResult(tuple(names), deltas, widths, start, row, retained, fallback, analytic)


def calibrate_global(pilot: PilotSet, s_obs, scale, retain: float = 0.01,
                     space: ParameterSpace | None = None) -> CalibrationResult:
    """Calibration for ABC-MCMC: one retained set on the full standardized
    statistics distance, a single tolerance (repeated per parameter)."""
    s_obs = np.asarray(s_obs, dtype=float)
    scale = np.asarray(scale, dtype=float)
    if np.any(scale <= 0):
        raise ContractViolation("distance scales must be > 0")
    space = space or _pilot_box(pilot.param_names, pilot.theta)
    z = (pilot.stats - s_obs) / scale
    d = np.sqrt(np.sum(z * z, axis=1))
    k = _n_keep(retain, len(pilot))
    keep = np.argsort(d, kind="stable")[:k]
    n = len(pilot.param_names)
    widths = np.empty(n)
    fallback = np.zeros(n, bool)
    for i in range(n):
        widths[i], fallback[i] = _width(pilot.theta[keep, i], space, i)
    row = int(keep[0])
    return CalibrationResult(pilot.param_names, np.full(n, d[keep].max()), widths, pilot.theta[row].copy(), row,
                             {name: keep for name in pilot.param_names}, fallback)


def warm_start_retry(runner: Callable, calibration: CalibrationResult, pilot, rng,
                     probe_iters: int = 1000, max_rounds: int = 50) -> np.ndarray:
    """Probe the chain from the calibrated start until every parameter has
    accepted at least one update.

    ``runner(start, iterations, seed)`` must return an object with an
    ``accepts`` array (one count per parameter). After each probe, every
    parameter without an accepted update gets a new start value drawn from
    its retained pilot values (``pilot`` is a :class:`PilotSet` or its
    parameter matrix). Probe iterations are discarded.

    Raises
    ------
    CalibrationError
        After ``max_rounds`` probes without full coverage; ``report`` maps
        parameter names to their accepted-update counts in the last probe.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    theta = getattr(pilot, "theta", pilot)
    start = calibration.start.copy()
    names = calibration.param_names
    accepts = None
    for _ in range(max_rounds):
        chain = runner(start.copy(), probe_iters, int(rng.integers(0, 2**63)))
        accepts = np.asarray(chain.accepts)
        stuck = np.flatnonzero(accepts == 0)
        if stuck.size == 0:
            return start
        for i in stuck:
            pool = calibration.retained.get(names[i])
            if pool is not None and len(pool):
                start[i] = theta[rng.choice(pool), i]
    report = {name: int(a) for name, a in zip(names, accepts)}
    raise CalibrationError(f"no accepted update for {[n for n, a in report.items() if a == 0]} "
                           f"after {max_rounds} warm-start rounds", report)

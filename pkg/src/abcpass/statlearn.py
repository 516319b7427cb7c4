"""Pilot simulations, Box-Cox linearization and learned linear projections.

For a statistics vector that is (after transformation) linear in the
parameters with Gaussian noise, ``s = c_0 + C theta + eps``, the scalar
``tau_i = beta_i' s`` with ``beta_i = Sigma_eps^{-1} c_i`` is sufficient for
``theta_i``. :func:`learn_projection` estimates ``beta_i`` from a pilot set.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import ContractViolation, SimulationError, SingularCovarianceError
from .model import ParameterSpace, prior_sample

LAMBDA_GRID = np.round(np.arange(-50, 51) / 10.0, 1)


@dataclass
class PilotSet:
    """Prior-predictive simulations: ``theta`` (P x n, working space) and
    ``stats`` (P x m)."""

    param_names: tuple[str, ...]
    stat_names: tuple[str, ...]
    theta: np.ndarray
    stats: np.ndarray

    def __post_init__(self):
        self.param_names = tuple(self.param_names)
        self.stat_names = tuple(self.stat_names)
        self.theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        self.stats = np.atleast_2d(np.asarray(self.stats, dtype=float))
        P = self.theta.shape[0]
        if self.theta.shape != (P, len(self.param_names)):
            raise ContractViolation(f"theta block has shape {self.theta.shape}")
        if self.stats.shape != (P, len(self.stat_names)):
            raise ContractViolation(f"stats block has shape {self.stats.shape}")
        if not (np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.stats))):
            raise ContractViolation("pilot rows must be finite")

    def __len__(self) -> int:
        return self.theta.shape[0]

    def subset(self, rows) -> "PilotSet":
        return PilotSet(self.param_names, self.stat_names, self.theta[rows], self.stats[rows])

    def with_stats(self, stats) -> "PilotSet":
        return PilotSet(self.param_names, self.stat_names, self.theta, stats)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.param_names + self.stat_names)
            for row in np.hstack([self.theta, self.stats]):
                w.writerow([repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path, n_params: int) -> "PilotSet":
        with open(path, newline="") as fh:
            header = next(csv.reader(fh))
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(header[:n_params], header[n_params:], data[:, :n_params], data[:, n_params:])


def _simulate_checked(model, theta_nat, seed_seq: np.random.SeedSequence, max_failures=10_000):
    """Call ``model.simulate`` until it returns finite statistics."""
    for _ in range(max_failures + 1):
        seed = int(seed_seq.spawn(1)[0].generate_state(1, np.uint64)[0])
        try:
            s = np.asarray(model.simulate(theta_nat, seed), dtype=float)
        except (SimulationError, ArithmeticError):
            continue
        if np.all(np.isfinite(s)):
            return s
    raise SimulationError(f"simulator failed {max_failures + 1} consecutive times at {theta_nat}")


def numba_seed(seed) -> int:
    """32-bit seed for numba's generator derived from a 64-bit seed."""
    return int(np.random.SeedSequence(seed).generate_state(1)[0])


PILOT_CHUNKS = 16


def generate_pilot(model, space: ParameterSpace, size: int, seed: int, threads: int = 1,
                   use_compiled: bool = True) -> PilotSet:
    """Draw ``size`` parameter vectors from the prior and simulate each.

    Work is split into a fixed number of chunks with independent seed
    streams, so the result depends on ``seed`` only, not on ``threads``.
    """
    if size < 1:
        raise ContractViolation("pilot size must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    theta = np.stack([prior_sample(space, rng) for _ in range(size)])
    m = len(model.statistic_names)
    stats = np.empty((size, m))
    chunks = [c for c in np.array_split(np.arange(size), PILOT_CHUNKS) if len(c)]
    compiled = getattr(model, "compiled", None) if use_compiled else None

    def work(k):
        rows = chunks[k]
        ss = np.random.SeedSequence(seed, spawn_key=(1, k))
        if compiled is not None:
            sim, params = compiled()
            out = np.empty((len(rows), m))
            status = _kernels.pilot_kernel(sim, params, np.ascontiguousarray(theta[rows]),
                                           space.is_log.copy(), m, int(ss.generate_state(1)[0]), out)
            if status != _kernels.STATUS_OK:
                raise SimulationError("simulator kept returning non-finite statistics")
            stats[rows] = out
        else:
            for r, child in zip(rows, ss.spawn(len(rows))):
                stats[r] = _simulate_checked(model, space.to_natural(theta[r]), child)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        list(pool.map(work, range(len(chunks))))
    return PilotSet(space.names, tuple(model.statistic_names), theta, stats)


@dataclass(frozen=True)
class BoxCoxTransform:
    """Per-statistic power transform ``((x + shift)^lam - 1) / lam``.

    ``active`` is False for statistics passed through unchanged (identity
    transform); ``floor`` replaces shifted values that are not positive.
    """

    lam: np.ndarray
    shift: np.ndarray
    floor: np.ndarray
    active: np.ndarray
    degenerate: np.ndarray
    ref_min: np.ndarray
    ref_max: np.ndarray

    def __post_init__(self):
        for name in ("lam", "shift", "floor", "ref_min", "ref_max"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        for name in ("active", "degenerate"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=bool))
        if np.any(np.abs(self.lam) > 5):
            raise ContractViolation("Box-Cox lambda must lie in [-5, 5]")
        if np.any(self.shift < 0):
            raise ContractViolation("Box-Cox shift must be >= 0")

    @property
    def m(self) -> int:
        return self.lam.shape[0]

    @classmethod
    def identity(cls, m: int) -> "BoxCoxTransform":
        z = np.zeros(m)
        return cls(np.ones(m), z, np.ones(m), np.zeros(m, bool), np.zeros(m, bool), z, z)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in
                ("lam", "shift", "floor", "active", "degenerate", "ref_min", "ref_max")}

    @classmethod
    def from_dict(cls, d) -> "BoxCoxTransform":
        return cls(**{k: np.asarray(v) for k, v in d.items()})


def _boxcox(x, lam):
    x = np.asarray(x, dtype=float)
    if lam == 0:
        return np.log(x)
    return np.expm1(lam * np.log(x)) / lam


def fit_boxcox(pilot: PilotSet, grid=LAMBDA_GRID) -> BoxCoxTransform:
    """Choose a power per statistic by profile likelihood on a lambda grid.

    For each lambda the transformed statistic is regressed on the
    parameters (with intercept); the score is the Gaussian profile
    log-likelihood ``-P/2 log(RSS/P)`` plus the Jacobian
    ``(lam - 1) * sum(log(x + shift))``.
    """
    P, m = pilot.stats.shape
    if P < 50:
        raise ContractViolation(f"Box-Cox fit needs at least 50 pilot rows, got {P}")
    X = np.hstack([np.ones((P, 1)), pilot.theta])
    Q, _ = np.linalg.qr(X)
    lam = np.ones(m)
    shift = np.zeros(m)
    floor = np.ones(m)
    degenerate = np.zeros(m, bool)
    lo = pilot.stats.min(axis=0)
    hi = pilot.stats.max(axis=0)
    for j in range(m):
        span = hi[j] - lo[j]
        if not span > 0:
            degenerate[j] = True
            continue
        shift[j] = max(0.0, 1e-6 * span - lo[j])
        x = pilot.stats[:, j] + shift[j]
        floor[j] = x[x > 0].min()
        logx = np.log(x)
        jac = logx.sum()
        best, best_score = 1.0, -np.inf
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            for g in grid:
                y = _boxcox(x, g)
                sd = y.std()
                if not (np.isfinite(sd) and sd > 0):
                    continue
                # standardize before projecting; RSS scales with sd^2
                z = (y - y.mean()) / sd
                resid = z - Q @ (Q.T @ z)
                rss = float(resid @ resid)
                if not rss > 0:
                    continue
                score = -0.5 * P * (np.log(rss / P) + 2.0 * np.log(sd)) + (g - 1.0) * jac
                if score > best_score:
                    best, best_score = float(g), score
        lam[j] = best
    return BoxCoxTransform(lam, shift, floor, ~degenerate, degenerate, lo, hi)


def apply_boxcox(t: BoxCoxTransform, s, return_flags: bool = False):
    """Transform a statistics vector (or a P x m block).

    Shifted values that are not positive are clamped to ``floor`` (the
    smallest positive shifted pilot value); ``return_flags`` also returns
    the boolean mask of clamped entries.
    """
    s = np.asarray(s, dtype=float)
    if s.shape[-1] != t.m:
        raise ContractViolation(f"statistics of length {s.shape[-1]}, transform expects {t.m}")
    x = s + t.shift
    flags = t.active & (x <= 0)
    x = np.where(flags, t.floor, x)
    y = np.array(s, dtype=float, copy=True)
    for j in np.flatnonzero(t.active):
        y[..., j] = _boxcox(x[..., j], t.lam[j])
    return (y, flags) if return_flags else y


@dataclass(frozen=True)
class LinearProjection:
    """Maps a statistics vector to ``tau = beta @ boxcox(s)``.

    ``beta`` has one row per projected coordinate; most projections are a
    single row, but a parameter may be assigned several coordinates (for
    example a known sufficient pair of statistics).
    """

    parameter: str
    beta: np.ndarray
    transform: BoxCoxTransform
    tau_mean: np.ndarray
    tau_sd: np.ndarray
    heldout_r: float | None = None
    stat_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "tau_mean", np.atleast_1d(np.asarray(self.tau_mean, dtype=float)))
        object.__setattr__(self, "tau_sd", np.atleast_1d(np.asarray(self.tau_sd, dtype=float)))
        if beta.shape[1] != self.transform.m:
            raise ContractViolation("beta length does not match the transform")
        if not np.all(np.isfinite(beta)):
            raise ContractViolation(f"{self.parameter}: non-finite projection coefficients")
        if self.tau_sd.shape != (beta.shape[0],) or not np.all(self.tau_sd > 0):
            raise ContractViolation(f"{self.parameter}: tau SD must be > 0 for every row")

    @property
    def rows(self) -> int:
        return self.beta.shape[0]

    def tau(self, s) -> np.ndarray:
        """Projected coordinates; shape ``(rows,)`` or ``(P, rows)``.

        Each row is summed in the same order whatever the batch shape, so
        exact ties between observed and simulated statistics survive.
        """
        y = apply_boxcox(self.transform, s)
        return np.sum(y[..., None, :] * self.beta, axis=-1)

    def distance(self, s, t_obs) -> np.ndarray:
        """Standardized Euclidean distance between ``tau(s)`` and ``t_obs``."""
        z = (self.tau(s) - t_obs) / self.tau_sd
        return np.sqrt(np.sum(z * z, axis=-1))

    def to_json(self) -> dict:
        single = self.rows == 1
        return {
            "parameter": self.parameter,
            "lambda": self.transform.lam.tolist(),
            "shift": self.transform.shift.tolist(),
            "beta": self.beta[0].tolist() if single else self.beta.tolist(),
            "tau_mean": float(self.tau_mean[0]) if single else self.tau_mean.tolist(),
            "tau_sd": float(self.tau_sd[0]) if single else self.tau_sd.tolist(),
            "heldout_r": self.heldout_r,
            "statistics": list(self.stat_names),
            "transform": self.transform.to_dict(),
        }

    @classmethod
    def from_json(cls, d) -> "LinearProjection":
        return cls(d["parameter"], d["beta"], BoxCoxTransform.from_dict(d["transform"]),
                   d["tau_mean"], d["tau_sd"], d.get("heldout_r"), tuple(d.get("statistics", ())))


def project(p: LinearProjection, s):
    """``tau = beta . apply_boxcox(transform, s)``; a float for one-row
    projections applied to one vector."""
    s = np.asarray(s, dtype=float)
    if s.shape[-1] != p.beta.shape[1]:
        raise ContractViolation(f"statistics of length {s.shape[-1]}, projection expects {p.beta.shape[1]}")
    tau = p.tau(s)
    if p.rows == 1:
        tau = tau[..., 0]
        return float(tau) if tau.ndim == 0 else tau
    return tau


def _collinear_names(M, names, tol=1e-9):
    w, V = np.linalg.eigh(M)
    scale = max(abs(w[-1]), 1e-300)
    bad = set()
    for k in np.flatnonzero(w <= tol * scale):
        v = V[:, k]
        bad.update(np.flatnonzero(np.abs(v) > 1e-6 * np.abs(v).max()).tolist())
    return [names[j] for j in sorted(bad)]


def _solve(M, rhs, names, ridge):
    m = M.shape[0]
    tr = np.trace(M)
    A = M + ridge * (tr / m if tr > 0 else 1.0) * np.eye(m)
    w = np.linalg.eigvalsh(A)
    if not (w[0] > 1e-12 * max(w[-1], 0.0)):
        culprits = _collinear_names(M, names)
        raise SingularCovarianceError(
            f"statistics covariance is singular; collinear statistics: {', '.join(culprits)}", culprits)
    return np.linalg.solve(A, rhs)


def _fit_beta(theta, S, i, ridge, method, names):
    # solve on unit-variance statistics so the relative ridge does not
    # depend on how differently the statistics are scaled
    sd = S.std(axis=0, ddof=1)
    sd = np.where(sd > 0, sd, 1.0)
    return _fit_beta_std(theta, S / sd, i, ridge, method, names) / sd


def _fit_beta_std(theta, S, i, ridge, method, names):
    if method == "regression":
        Sc = S - S.mean(axis=0)
        tc = theta[:, i] - theta[:, i].mean()
        cov_s = Sc.T @ Sc / (len(S) - 1)
        cov_st = Sc.T @ tc / (len(S) - 1)
        return _solve(cov_s, cov_st, names, ridge)
    if method == "sufficient":
        X = np.hstack([np.ones((len(S), 1)), theta])
        coef, *_ = np.linalg.lstsq(X, S, rcond=None)
        resid = S - X @ coef
        cov_e = resid.T @ resid / (len(S) - X.shape[1])
        return _solve(cov_e, coef[1 + i], names, ridge)
    raise ContractViolation(f"unknown projection method {method!r}")


def learn_projection(pilot: PilotSet, target: str, ridge: float = 1e-8, method: str = "sufficient",
                     transform: BoxCoxTransform | None = None, heldout: float = 0.1) -> LinearProjection:
    """Estimate the sufficient linear combination of statistics for ``target``.

    Parameters
    ----------
    pilot : PilotSet
        Pilot simulations whose ``stats`` are already Box-Cox transformed.
    target : str
        Parameter name.
    ridge : float
        Relative ridge ``ridge * tr(M)/m`` added to the covariance matrix
        before inversion.
    method : {"sufficient", "regression"}
        ``"sufficient"`` (default) computes ``Sigma_eps^{-1} c_i`` where
        ``c_i`` is the linear effect of ``theta_i`` on ``s`` and
        ``Sigma_eps`` the residual covariance of that linear fit.
        ``"regression"`` computes ``Sigma_s^{-1} Cov(s, theta_i)`` with the
        marginal statistics covariance (the least-squares predictor of
        ``theta_i``).
    transform : BoxCoxTransform, optional
        Stored with the projection and applied by :func:`project`; identity
        by default.
    heldout : float
        Fraction of pilot rows (the last ones) held out to report the
        Pearson correlation between ``theta_i`` and ``tau_i``.

    Raises
    ------
    SingularCovarianceError
        If the covariance matrix is singular even after the ridge.
    """
    if target not in pilot.param_names:
        raise ContractViolation(f"unknown parameter {target!r}")
    if ridge < 0:
        raise ContractViolation("ridge must be >= 0")
    i = pilot.param_names.index(target)
    P, m = pilot.stats.shape
    transform = transform or BoxCoxTransform.identity(m)
    n_hold = int(P * heldout) if P >= 20 else 0
    fit = slice(0, P - n_hold)
    beta = _fit_beta(pilot.theta[fit], pilot.stats[fit], i, ridge, method, pilot.stat_names)
    tau = pilot.stats @ beta
    sd = tau.std(ddof=1)
    r = None
    if n_hold >= 3:
        th, tt = pilot.theta[P - n_hold:, i], tau[P - n_hold:]
        if th.std() > 0 and tt.std() > 0:
            r = float(np.corrcoef(th, tt)[0, 1])
    return LinearProjection(target, beta, transform, tau.mean(), sd, r, pilot.stat_names)


def select_projection(pilot: PilotSet, target: str, statistics: Sequence[str],
                      transform: BoxCoxTransform | None = None) -> LinearProjection:
    """Projection onto a fixed subset of statistics, one coordinate each.

    Used when sufficient statistics are known analytically; each selected
    statistic is standardized by its pilot SD in the distance.
    """
    m = len(pilot.stat_names)
    transform = transform or BoxCoxTransform.identity(m)
    idx = [pilot.stat_names.index(s) for s in statistics]
    beta = np.zeros((len(idx), m))
    beta[np.arange(len(idx)), idx] = 1.0
    y = apply_boxcox(transform, pilot.stats) @ beta.T
    return LinearProjection(target, beta, transform, y.mean(axis=0), y.std(axis=0, ddof=1), None,
                            pilot.stat_names)


def learn_projections(pilot: PilotSet, targets=None, boxcox: bool = True, **kw) -> dict[str, LinearProjection]:
    """Fit Box-Cox once on the pilot and learn one projection per target."""
    transform = fit_boxcox(pilot) if boxcox else BoxCoxTransform.identity(len(pilot.stat_names))
    transformed = pilot.with_stats(apply_boxcox(transform, pilot.stats))
    targets = pilot.param_names if targets is None else targets
    return {t: learn_projection(transformed, t, transform=transform, **kw) for t in targets}


def save_projections(projections: dict[str, LinearProjection], path) -> None:
    Path(path).write_text(json.dumps([p.to_json() for p in projections.values()], indent=2))


def load_projections(path) -> dict[str, LinearProjection]:
    return {d["parameter"]: LinearProjection.from_json(d) for d in json.loads(Path(path).read_text())}

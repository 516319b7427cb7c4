"""Truncated generalized Pareto distribution (location 0) used as the DFE."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation

# below this |shape| the exponential limit is used
SHAPE_EPS = 1e-8


@dataclass(frozen=True)
class GPDParams:
    shape: float
    scale: float
    s_max: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ContractViolation(f"GPD scale must be > 0, got {self.scale}")
        if not self.s_max > 0:
            raise ContractViolation(f"GPD truncation s_max must be > 0, got {self.s_max}")

    @property
    def support_end(self) -> float:
        """Right end of the untruncated support (``-scale/shape`` for shape < 0)."""
        return -self.scale / self.shape if self.shape < -SHAPE_EPS else math.inf

    @property
    def upper(self) -> float:
        return min(self.s_max, self.support_end)

    @property
    def open_upper(self) -> bool:
        return self.support_end <= self.s_max


def gpd_cdf(s, p: GPDParams):
    """Untruncated GPD CDF."""
    s = np.clip(np.asarray(s, dtype=float), 0.0, p.support_end)
    if abs(p.shape) < SHAPE_EPS:
        return -np.expm1(-s / p.scale)
    return 1.0 - np.power(1.0 + p.shape * s / p.scale, -1.0 / p.shape)


def _log_normalizer(p: GPDParams) -> float:
    if p.open_upper:
        return 0.0
    return math.log(float(gpd_cdf(p.upper, p)))


def gpd_logpdf(s, p: GPDParams):
    """Log density of the GPD truncated to ``[0, min(s_max, support end)]``."""
    s = np.asarray(s, dtype=float)
    if p.open_upper:
        inside = (s >= 0) & (s < p.upper)
    else:
        inside = (s >= 0) & (s <= p.upper)
    safe = np.where(inside, s, 0.0)
    if abs(p.shape) < SHAPE_EPS:
        logf = -math.log(p.scale) - safe / p.scale
    else:
        logf = -math.log(p.scale) - (1.0 / p.shape + 1.0) * np.log1p(p.shape * safe / p.scale)
    out = np.where(inside, logf - _log_normalizer(p), -np.inf)
    return out if out.ndim else float(out)


def gpd_density(s, p: GPDParams):
    """Truncated GPD density; zero outside the support."""
    out = np.exp(gpd_logpdf(s, p))
    return out if np.ndim(out) else float(out)


def gpd_sample(p: GPDParams, rng: np.random.Generator, size=None):
    """Inverse-CDF draws from the truncated GPD."""
    top = 1.0 if p.open_upper else float(gpd_cdf(p.upper, p))
    u = rng.uniform(0.0, top, size)
    if abs(p.shape) < SHAPE_EPS:
        x = -p.scale * np.log1p(-u)
    else:
        x = p.scale / p.shape * (np.power(1.0 - u, -p.shape) - 1.0)
    x = np.minimum(x, np.nextafter(p.upper, 0.0) if p.open_upper else p.upper)
    return x if np.ndim(x) else float(x)

"""Benchmark simulators: Normal toy, GLM with a cyclic design, Binomial check.

Each model offers a pure-Python ``simulate(theta, seed)`` (NumPy generator
seeded per call) and a ``compiled()`` hook that hands a numba simulator to
the compiled sampler kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ContractViolation
from .model import ParameterSpace


@njit(cache=True, nogil=True)
def _normal_sim(theta, params, out):
    n = int(params[0])
    mu = theta[0]
    sd = math.sqrt(theta[1])
    # Welford keeps S² accurate when sigma² is tiny relative to mu²
    mean = 0.0
    m2 = 0.0
    for k in range(n):
        x = mu + sd * np.random.standard_normal()
        d = x - mean
        mean += d / (k + 1)
        m2 += d * (x - mean)
    out[0] = mean
    out[1] = m2 / (n - 1)


@njit(cache=True, nogil=True)
def _glm_sim(theta, params, out):
    # params holds C row-major
    n = theta.shape[0]
    for r in range(n):
        acc = np.random.standard_normal()
        for c in range(n):
            acc += params[r * n + c] * theta[c]
        out[r] = acc


@njit(cache=True, nogil=True)
def _binomial_sim(theta, params, out):
    out[0] = np.random.binomial(int(params[0]), theta[0])


@dataclass(frozen=True)
class NormalModel:
    """n i.i.d. N(mu, sigma²) draws summarized by (mean, unbiased variance).

    Parameters are ``theta = (mu, sigma2)``.
    """

    n: int = 10
    statistic_names: tuple[str, ...] = ("xbar", "S2")

    def __post_init__(self):
        if self.n < 2:
            raise ContractViolation(f"NormalModel needs n >= 2, got {self.n}")

    def simulate(self, theta, seed) -> np.ndarray:
        mu, sigma2 = np.asarray(theta, dtype=float)
        if not sigma2 > 0:
            raise ContractViolation(f"sigma2 must be > 0, got {sigma2}")
        x = np.random.default_rng(seed).normal(mu, math.sqrt(sigma2), self.n)
        return np.array([x.mean(), x.var(ddof=1)])

    def compiled(self):
        return _normal_sim, np.array([float(self.n)])

    @staticmethod
    def default_space(mu=(-10.0, 10.0), sigma2=(0.1, 15.0)) -> ParameterSpace:
        return ParameterSpace.uniform({"mu": mu, "sigma2": sigma2})


def cyclic_design_matrix(n: int) -> np.ndarray:
    """Cyclic design normalized so that ``det(C'C) = 1``.

    Row ``r`` of the raw matrix ``B`` is ``(1/n, ..., n/n)`` rotated ``r``
    places to the right: row 1 starts ``n/n, 1/n, 2/n`` and the last row
    starts ``2/n, 3/n``. Then ``C = B * det(B'B)^(-1/(2n))``.

    Examples
    --------
    >>> cyclic_design_matrix(2)
    array([[0.57735027, 1.15470054],
           [1.15470054, 0.57735027]])
    """
    if n < 1:
        raise ContractViolation(f"design dimension must be >= 1, got {n}")
    v = np.arange(1, n + 1) / n
    B = np.stack([np.roll(v, r) for r in range(n)])
    # det(B'B) = det(B)^2; slogdet avoids under/overflow for large n
    sign, logdet = np.linalg.slogdet(B)
    if sign == 0 or not np.isfinite(logdet):
        raise ContractViolation(f"cyclic design matrix for n={n} is singular")
    return B * math.exp(-logdet / n)


@dataclass(frozen=True)
class GLMModel:
    """``s = C theta + eps`` with standard normal noise."""

    C: np.ndarray
    statistic_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        C = np.array(self.C, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ContractViolation(f"design matrix must be square, got shape {C.shape}")
        if not np.all(np.isfinite(C)):
            raise ContractViolation("design matrix has non-finite entries")
        if not np.linalg.det(C.T @ C) > 0:
            raise ContractViolation("design matrix is rank deficient")
        C.setflags(write=False)
        object.__setattr__(self, "C", C)
        if not self.statistic_names:
            object.__setattr__(self, "statistic_names", tuple(f"s{j + 1}" for j in range(C.shape[0])))

    @classmethod
    def cyclic(cls, n: int) -> "GLMModel":
        return cls(cyclic_design_matrix(n))

    @property
    def n(self) -> int:
        return self.C.shape[0]

    def simulate(self, theta, seed) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n,):
            raise ContractViolation(f"theta of shape {theta.shape}, expected ({self.n},)")
        return self.C @ theta + np.random.default_rng(seed).standard_normal(self.n)

    def compiled(self):
        return _glm_sim, np.ascontiguousarray(self.C).ravel().copy()

    def default_space(self, bound=100.0) -> ParameterSpace:
        return ParameterSpace.uniform({f"theta{i + 1}": (-bound, bound) for i in range(self.n)})


@dataclass(frozen=True)
class BinomialCheckModel:
    """Success count of ``N`` Bernoulli(theta) trials; a discrete statistic
    for which a zero tolerance is usable."""

    N: int = 20
    statistic_names: tuple[str, ...] = ("k",)

    def __post_init__(self):
        if self.N < 1:
            raise ContractViolation(f"N must be >= 1, got {self.N}")

    def simulate(self, theta, seed) -> np.ndarray:
        (p,) = np.asarray(theta, dtype=float)
        if not 0.0 <= p <= 1.0:
            raise ContractViolation(f"success probability {p} outside [0, 1]")
        return np.array([float(np.random.default_rng(seed).binomial(self.N, p))])

    def compiled(self):
        return _binomial_sim, np.array([float(self.N)])

    @staticmethod
    def default_space() -> ParameterSpace:
        return ParameterSpace.uniform({"p": (0.0, 1.0)})

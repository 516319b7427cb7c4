"""Parameter spaces, priors, proposal kernels and the simulator contract.

Every parameter vector handled by the samplers lives in *working space*:
parameters declared with ``scale="log10"`` are stored, proposed and recorded
as ``log10`` values, while simulators always receive natural-scale values
(see :meth:`ParameterSpace.to_natural`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import ContractViolation

PRIOR_KINDS = ("uniform", "log10-uniform", "gpd-conditional")
SCALES = ("linear", "log10")


@dataclass(frozen=True)
class PriorSpec:
    """Prior of a single parameter.

    ``lower``/``upper`` are working-space bounds, so a ``log10-uniform`` prior
    on N_e with ``log10(N_e) ~ U[1.5, 4.5]`` is ``PriorSpec("log10-uniform",
    1.5, 4.5)``. For ``gpd-conditional`` priors the bounds are the support
    ``[0, s_max]`` and ``hyper_refs`` names the (shape, scale) parameters.
    """

    kind: str
    lower: float
    upper: float
    hyper_refs: tuple[str, str] | None = None

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise ContractViolation(f"unknown prior kind {self.kind!r}")
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise ContractViolation("prior bounds must be finite")
        if self.lower > self.upper:
            raise ContractViolation(f"prior lower {self.lower} > upper {self.upper}")
        if self.kind == "gpd-conditional":
            if self.hyper_refs is None or len(self.hyper_refs) != 2:
                raise ContractViolation("gpd-conditional prior needs (shape, scale) hyper_refs")
            if self.lower != 0.0:
                raise ContractViolation("gpd-conditional support must start at 0")
            object.__setattr__(self, "hyper_refs", tuple(self.hyper_refs))
        elif self.hyper_refs is not None:
            raise ContractViolation(f"hyper_refs only allowed for gpd-conditional, got {self.kind}")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def degenerate(self) -> bool:
        return self.lower == self.upper


@dataclass(frozen=True)
class ParameterDef:
    name: str
    prior: PriorSpec
    scale: str = "linear"

    def __post_init__(self):
        if not self.name.isidentifier():
            raise ContractViolation(f"parameter name {self.name!r} is not an identifier")
        if self.scale not in SCALES:
            raise ContractViolation(f"unknown scale {self.scale!r}")
        if self.prior.kind == "log10-uniform" and self.scale != "log10":
            raise ContractViolation(f"{self.name}: log10-uniform prior requires scale='log10'")
        if self.prior.kind == "uniform" and self.scale == "log10":
            raise ContractViolation(f"{self.name}: use a log10-uniform prior for log10-scale parameters")


@dataclass(frozen=True)
class ParameterSpace:
    """Ordered, immutable collection of parameter definitions."""

    params: tuple[ParameterDef, ...]
    lower: np.ndarray = field(init=False, repr=False, compare=False)
    upper: np.ndarray = field(init=False, repr=False, compare=False)
    is_log: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        params = tuple(self.params)
        if not params:
            raise ContractViolation("a parameter space needs at least one parameter")
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ContractViolation(f"duplicate parameter names in {names}")
        for p in params:
            if p.prior.kind == "gpd-conditional":
                for ref in p.prior.hyper_refs:
                    if ref not in names:
                        raise ContractViolation(f"{p.name}: hyper-parameter {ref!r} not in space")
        object.__setattr__(self, "params", params)
        for attr, values in (
            ("lower", [p.prior.lower for p in params]),
            ("upper", [p.prior.upper for p in params]),
            ("is_log", [p.scale == "log10" for p in params]),
        ):
            arr = np.asarray(values)
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)

    @classmethod
    def uniform(cls, bounds: Mapping[str, tuple[float, float]]) -> "ParameterSpace":
        """Shorthand for a box of linear uniform priors."""
        return cls(tuple(ParameterDef(k, PriorSpec("uniform", lo, hi)) for k, (lo, hi) in bounds.items()))

    def __len__(self) -> int:
        return len(self.params)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params)

    @property
    def ranges(self) -> np.ndarray:
        return self.upper - self.lower

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no parameter named {name!r}") from None

    @property
    def is_box(self) -> bool:
        """True when every prior is flat in working space (no conditional priors)."""
        return all(p.prior.kind != "gpd-conditional" for p in self.params)

    def hyper_indices(self) -> list[int]:
        refs = {r for p in self.params if p.prior.kind == "gpd-conditional" for r in p.prior.hyper_refs}
        return [i for i, p in enumerate(self.params) if p.name in refs]

    def to_natural(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return np.where(self.is_log, 10.0 ** theta, theta)

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))

    def check(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (len(self),):
            raise ContractViolation(f"parameter vector of shape {theta.shape}, expected ({len(self)},)")
        return theta


@runtime_checkable
class Simulator(Protocol):
    """What a model must provide to be sampled.

    ``simulate`` receives natural-scale parameters and must be a pure
    function of ``(theta, seed)``. Models may additionally expose
    ``compiled()`` returning ``(jitted_fn, params)`` where
    ``jitted_fn(theta, params, out)`` fills ``out`` using numba's random
    stream; samplers then run entirely in compiled code.
    """

    statistic_names: Sequence[str]

    def simulate(self, theta: np.ndarray, seed: int) -> np.ndarray: ...


def _gpd_hyper(space: ParameterSpace, theta: np.ndarray, p: ParameterDef, hyper):
    shape_name, scale_name = p.prior.hyper_refs
    if hyper is not None:
        return float(hyper[shape_name]), float(hyper[scale_name])
    values = space.to_natural(theta)
    return float(values[space.index(shape_name)]), float(values[space.index(scale_name)])


def prior_log_density(space: ParameterSpace, theta, hyper: Mapping[str, float] | None = None) -> float:
    """Log of :func:`prior_density`; ``-inf`` outside the support."""
    from .wf.gpd import GPDParams, gpd_logpdf

    theta = space.check(theta)
    total = 0.0
    for x, p in zip(theta, space.params):
        pr = p.prior
        if pr.degenerate:
            if x != pr.lower:
                return -math.inf
            continue
        if x < pr.lower or x > pr.upper:
            return -math.inf
        if pr.kind == "gpd-conditional":
            shape, scale = _gpd_hyper(space, theta, p, hyper)
            if scale <= 0:
                return -math.inf
            total += float(gpd_logpdf(x, GPDParams(shape, scale, pr.upper)))
            if total == -math.inf:
                return total
        else:
            total -= math.log(pr.width)
    return total


def prior_density(space: ParameterSpace, theta, hyper: Mapping[str, float] | None = None) -> float:
    """Product of per-parameter prior densities in working space.

    Degenerate (point) priors contribute a factor of one. ``hyper`` overrides
    the GPD hyper-parameter values; by default they are read from ``theta``.
    """
    lp = prior_log_density(space, theta, hyper)
    return math.exp(lp) if lp > -math.inf else 0.0


def prior_sample(space: ParameterSpace, rng: np.random.Generator) -> np.ndarray:
    """One working-space draw; log10 parameters are uniform in log10.

    Conditional GPD parameters are drawn after their hyper-parameters.
    """
    from .wf.gpd import GPDParams, gpd_sample

    theta = np.empty(len(space))
    for i, p in enumerate(space.params):
        if p.prior.kind != "gpd-conditional":
            theta[i] = p.prior.lower if p.prior.degenerate else rng.uniform(p.prior.lower, p.prior.upper)
    for i, p in enumerate(space.params):
        if p.prior.kind == "gpd-conditional":
            shape, scale = _gpd_hyper(space, theta, p, None)
            theta[i] = gpd_sample(GPDParams(shape, scale, p.prior.upper), rng)
    return theta


@dataclass(frozen=True)
class ProposalKernel:
    """Symmetric uniform random-walk kernel, one half-width per parameter.

    A component is proposed as ``x + width * U(-1, 1)`` and folded back into
    the prior support by mirror reflection, which keeps ``q`` symmetric.
    """

    widths: tuple[float, ...]

    def __post_init__(self):
        w = tuple(float(x) for x in self.widths)
        if any(not (x >= 0 and math.isfinite(x)) for x in w):
            raise ContractViolation(f"kernel widths must be finite and >= 0, got {w}")
        object.__setattr__(self, "widths", w)

    @classmethod
    def from_fractions(cls, space: ParameterSpace, fractions) -> "ProposalKernel":
        fractions = np.broadcast_to(np.asarray(fractions, dtype=float), (len(space),))
        return cls(tuple(fractions * space.ranges))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.widths)


def reflect(x: float, lower: float, upper: float) -> float:
    """Mirror ``x`` at the bounds until it falls inside ``[lower, upper]``."""
    span = upper - lower
    if span <= 0:
        return lower
    y = (x - lower) % (2.0 * span)
    if y > span:
        y = 2.0 * span - y
    return lower + y


def propose_component(x: float, width: float, lower: float, upper: float, u: float) -> float:
    """Deterministic part of a proposal; ``u`` is a U(0, 1) variate.

    When the window is wider than the support the draw is uniform on the
    support, which is still a symmetric kernel.
    """
    span = upper - lower
    if width > span:
        return lower + u * span
    return reflect(x + width * (2.0 * u - 1.0), lower, upper)


def propose_update(theta, i: int, kernel: ProposalKernel, space: ParameterSpace,
                   rng: np.random.Generator) -> np.ndarray:
    """Copy of ``theta`` with only component ``i`` moved."""
    theta = space.check(theta)
    if not 0 <= i < len(space):
        raise ContractViolation(f"parameter index {i} out of range")
    out = theta.copy()
    out[i] = propose_component(theta[i], kernel.widths[i], space.lower[i], space.upper[i], rng.random())
    return out


def reflected_kernel_density(x_to: float, x_from: float, width: float, lower: float, upper: float) -> float:
    """Density of :func:`propose_component` moving ``x_from`` to ``x_to``.

    Sums the uniform window over all mirror images of ``x_to``; used to
    check kernel symmetry numerically.
    """
    span = upper - lower
    if width > span:
        return 1.0 / span
    if width == 0:
        return math.inf if x_to == x_from else 0.0
    total = 0.0
    k_max = int(math.ceil(width / span)) + 1
    # distances written so that swapping x_to and x_from maps k to -k exactly in floating point
    u, v = x_to - lower, x_from - lower
    for k in range(-k_max, k_max + 1):
        shift = 2 * k * span
        for dist in (abs((u - v) + shift), abs((u + v) - shift)):
            if dist <= width:
                total += 1.0 / (2 * width)
    return total

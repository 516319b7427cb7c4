"""Run configuration: a TOML file validated by pydantic.

Example::

    seed = 1
    out = "runs/normal"

    [model]
    kind = "normal"
    n = 10
    observed = [0.0, 5.0]

    [method]
    name = "abc-pass"
    iterations = 200000

Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ParameterConfig(_Strict):
    name: str
    prior: Literal["uniform", "log10-uniform"] = "uniform"
    lower: float
    upper: float

    @model_validator(mode="after")
    def _bounds(self):
        if not self.lower <= self.upper:
            raise ValueError(f"{self.name}: lower > upper")
        return self


class ModelConfig(_Strict):
    """Model choice. ``observed`` is the observed statistic vector for the
    toy models; ``data`` the trajectory CSV for ``wf``."""

    kind: Literal["normal", "glm", "binomial", "wf"]
    n: int = Field(10, ge=2, description="normal: sample size; glm: number of parameters")
    N: int = Field(20, ge=1, description="binomial: number of trials")
    observed: Optional[list[float]] = None
    data: Optional[str] = None
    diploid: bool = False
    min_freq: float = Field(0.02, ge=0, le=1)
    min_timepoints: int = Field(2, ge=1)
    last_timepoints: Optional[int] = Field(None, ge=2)

    @model_validator(mode="after")
    def _inputs(self):
        if self.kind == "wf" and self.data is None:
            raise ValueError("model.data (trajectory CSV) is required for kind = 'wf'")
        return self


class MethodConfig(_Strict):
    name: Literal["abc-pass", "abc-mcmc"] = "abc-pass"
    pilot_size: int = Field(10_000, ge=50)
    retain: float = Field(0.01, gt=0, le=0.5)
    iterations: int = Field(100_000, ge=0, description="toy models: total; wf: per parameter")
    burn_in: float = Field(0.1, ge=0, lt=1)
    probe_iters: int = Field(1000, ge=1)
    max_rounds: int = Field(50, ge=1)
    ridge: float = Field(1e-8, ge=0)
    projection: Literal["sufficient", "regression"] = "sufficient"
    boxcox: bool = True
    schedule: Optional[list[float]] = None
    thin: int = Field(1, ge=1)


class WFConfig(_Strict):
    log10ne: tuple[float, float] = (1.5, 4.5)
    s: tuple[float, float] = (0.0, 1.0)
    hyper_weight: float = Field(5.0, gt=0)


class DFEConfig(_Strict):
    enabled: bool = False
    chi: tuple[float, float] = (-0.2, 1.0)
    log10sigma: tuple[float, float] = (-2.5, -0.5)
    s_max: float = Field(1.0, gt=0)


class SweepConfig(_Strict):
    methods: list[Literal["abc-pass", "abc-mcmc"]] = ["abc-mcmc", "abc-pass"]
    tolerances: list[float] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
    widths: list[float] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
    replicates: int = Field(50, ge=1)
    iterations: int = Field(200_000, ge=1)
    bins: int = Field(100, ge=10)
    tolerance_scale: float = Field(0.01, gt=0, le=1)


class RunConfig(_Strict):
    seed: int = Field(0, ge=0, lt=2**64)
    out: str = "out"
    threads: Optional[int] = Field(None, ge=1)
    model: ModelConfig
    parameters: Optional[list[ParameterConfig]] = None
    method: MethodConfig = MethodConfig()
    wf: WFConfig = WFConfig()
    dfe: DFEConfig = DFEConfig()
    sweep: SweepConfig = SweepConfig()

    @field_validator("parameters")
    @classmethod
    def _unique(cls, v):
        if v is not None and len({p.name for p in v}) != len(v):
            raise ValueError("duplicate parameter names")
        return v

    def section_hash(self, *sections: str) -> str:
        """Digest of the named sections plus the seed; stamps artifacts."""
        d = self.model_dump(mode="json")
        payload = {k: d[k] for k in sections}
        payload["seed"] = self.seed
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _format(e: ValidationError) -> str:
    return "; ".join(f"{'.'.join(str(x) for x in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors())


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_format(e)) from None


def load_config(path) -> RunConfig:
    try:
        data = tomllib.loads(Path(path).read_text())
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"{path}: {e}") from None
    return parse_config(data)


def config_schema() -> dict:
    return RunConfig.model_json_schema()

"""Likelihood-free MCMC: classic ABC-MCMC and ABC with parameter-specific
statistics (single-component updates accepted on learned projections)."""

from .errors import (AbcError, CalibrationError, ConfigError, ContractViolation, DataFormatError,
                     SimulationError, SingularCovarianceError)
from .model import (ParameterDef, ParameterSpace, PriorSpec, ProposalKernel, prior_density,
                    prior_sample, propose_update)

__version__ = "0.1.0"

__all__ = [
    "AbcError", "CalibrationError", "ConfigError", "ContractViolation", "DataFormatError", "SimulationError",
    "SingularCovarianceError", "ParameterDef", "ParameterSpace", "PriorSpec", "ProposalKernel",
    "prior_density", "prior_sample", "propose_update",
]

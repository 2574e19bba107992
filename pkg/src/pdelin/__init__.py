"""Two-step Bayesian recovery of PDE coefficients via a linear inverse problem.

The pipeline observes a PDE solution in noise, infers the transformed
unknown v = L u in a conjugate Gaussian sequence model (with fixed,
empirical-Bayes or hierarchical-Bayes smoothness), and pushes the posterior
through the family's solution operator e(v) to recover the coefficient,
with credible sets mapping along.
"""

__version__ = "0.1.0"

from . import bases, experiments, inference, observe, pdes, seqspace
from .errors import (
    ConfigError,
    DimensionError,
    DomainError,
    InversionDomainError,
    NumericalError,
    PdelinError,
    PreconditionError,
)

__all__ = [
    "bases",
    "experiments",
    "inference",
    "observe",
    "pdes",
    "seqspace",
    "ConfigError",
    "DimensionError",
    "DomainError",
    "InversionDomainError",
    "NumericalError",
    "PdelinError",
    "PreconditionError",
    "__version__",
]

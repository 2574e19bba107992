"""Exception taxonomy shared by all pdelin modules.

The CLI maps these onto its exit-code contract: configuration problems
exit 2, domain/inversion failures exit 3, acceptance failures exit 4.
"""


class PdelinError(Exception):
    """Base class for all package errors."""


class DimensionError(PdelinError):
    """Shapes, grid sizes or declared dimensions do not match."""


class DomainError(PdelinError):
    """An input lies outside the mathematical domain of an operation."""


class NumericalError(PdelinError):
    """A numerical routine failed to converge or produced invalid output."""


class PreconditionError(PdelinError):
    """A family-specific solvability condition is violated."""


class ConfigError(PdelinError):
    """A run configuration is malformed or incomplete."""


class InversionDomainError(PdelinError):
    """The solution operator was applied outside its stability region.

    Carries the offending minimum (e.g. of the denominator field) and,
    when available, the grid location where it occurred.
    """

    def __init__(self, message, minimum=None, where=None):
        super().__init__(message)
        self.minimum = minimum
        self.where = where

"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: invariant violations exit with 2,
configuration and I/O problems with 1.
"""


class PacerError(Exception):
    """Base class for all package errors."""


class DomainError(PacerError):
    """An argument lies outside the mathematical domain of an operation."""


class DimensionError(PacerError):
    """Vector/matrix dimensions do not match."""


class InfeasibleError(PacerError):
    """The requested program has an empty feasible set (configuration error)."""


class CapacityError(PacerError):
    """An exact enumeration would exceed the configured node budget."""


class NumericError(PacerError):
    """A numerical routine (factorization, solve) failed."""


class MismatchError(PacerError):
    """Paired inputs have inconsistent lengths."""


class InvariantViolation(PacerError):
    """A runtime safety invariant was broken; always fatal."""


class ConfigError(PacerError):
    """Bad configuration file, missing path, or invalid CLI arguments."""

"""Exception taxonomy shared across the package.

Exit-code mapping for the CLI: ConfigError -> 2, DataFormatError -> 3,
NumericalFault -> 4. Everything else is a plain bug.
"""


class RaqaError(Exception):
    """Base class for all package errors."""


class DimensionError(RaqaError):
    """Tensor shapes incompatible with the requested operation."""


class DomainError(RaqaError):
    """Input outside the mathematical domain of an operation (e.g. log of <= 0)."""


class ContractError(RaqaError):
    """A documented precondition was violated by the caller."""


class ConfigError(RaqaError):
    """Bad run/rubric/generator configuration."""


class DataFormatError(RaqaError):
    """Malformed sample file, manifest, or checkpoint."""


class NumericalFault(RaqaError):
    """NaN/Inf surfaced during computation or training."""


class UndefinedCorrelationError(RaqaError):
    """Rank correlation requested on a constant vector."""

"""Exception types shared across the package."""


class IrsflError(Exception):
    """Base class for package errors."""


class DomainError(IrsflError, ValueError):
    """An argument violates a mathematical precondition."""


class ConfigError(IrsflError, ValueError):
    """A configuration file or parameter set is invalid."""


class DegenerateInputError(IrsflError):
    """Input is degenerate (e.g. zero gradient variance) and the operation
    has no well-defined result; callers are expected to handle this path."""

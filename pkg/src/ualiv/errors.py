"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration/validation problems
exit with 2, everything else with 1.
"""


class UalivError(Exception):
    """Base class for all package errors."""


class ConfigError(UalivError):
    """Bad construction-time configuration (shapes, dimensions, fields)."""


class ValidationError(UalivError):
    """Input data violates a documented precondition."""


class NumericError(UalivError):
    """Non-finite values where finite ones are required."""


class UnavailableError(UalivError):
    """A request that cannot be served from the current state (e.g. empty buffer)."""


class InternalError(UalivError):
    """Invariant breach that indicates a bug, not a user mistake."""

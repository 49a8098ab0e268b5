"""Exception types shared across the package."""


class SnnAttackError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SnnAttackError, ValueError):
    """Inconsistent shapes, geometry or hyper-parameters."""


class DomainError(SnnAttackError, ValueError):
    """An argument lies outside its mathematical domain."""


class UsageError(SnnAttackError, RuntimeError):
    """An operation was called in a state it does not support."""


class FormatError(SnnAttackError, ValueError):
    """A file on disk is malformed, truncated or corrupted."""

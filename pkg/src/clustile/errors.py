"""Exception types shared across the toolkit."""


class ClustileError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(ClustileError):
    """A value or file violates a documented invariant.

    The message always names the offending field or file location.
    """


class ConfigError(ClustileError):
    """A run configuration is missing, malformed or inconsistent."""


class MergeRoundLimitError(ClustileError):
    """Iterative cluster merging exceeded its round safety bound."""

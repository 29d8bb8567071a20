class ConfigError(ValueError):
    """Invalid configuration: bad values, unknown keys, inconsistent dimensions."""


class UsageError(ValueError):
    """An operation was called with arguments violating its preconditions."""

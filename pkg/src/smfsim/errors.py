"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Inconsistent or unusable configuration (bad parameters, missing coverage)."""


class DivergenceError(RuntimeError):
    """Raised when the divergent-trajectory fraction exceeds the configured threshold."""


class TruncationError(RuntimeError):
    """Raised when probability leaks into the top Fock level of a truncated mode."""

"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, NumericError -> 3.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class NumericError(RuntimeError):
    """NaN/Inf or divergence encountered during computation."""

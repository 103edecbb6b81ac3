"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4. Precondition violations on in-process calls raise
plain ValueError.
"""


class ConfigError(Exception):
    """Invalid or inconsistent configuration (bad key, bad value, bad combination)."""


class DataError(Exception):
    """Malformed or out-of-contract input data."""


class NumericError(Exception):
    """Non-finite values encountered during training or evaluation."""

"""Exception taxonomy shared across the package.

The CLI maps these to exit codes: ConfigError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class ConfigError(ValueError):
    """Invalid configuration: bad kind names, dimension mismatches, bad flags."""


class DataError(ValueError):
    """Malformed corpus input: bad records, blank utterances, empty files."""


class NumericalError(RuntimeError):
    """Non-finite values where finite ones are required (diverged training)."""

"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: configuration/usage/data problems exit
with 2, numerical failures (NaN aborts) exit with 3.
"""


class ConfigurationError(ValueError):
    """Bad wiring: shape mismatches, unknown config keys, missing heads."""


class UsageError(RuntimeError):
    """An API called outside its contract (e.g. backward on a non-scalar)."""


class DataError(ValueError):
    """Invalid input data, e.g. a token id outside the vocabulary."""


class NumericalError(ArithmeticError):
    """NaN/Inf encountered where finite values are required."""

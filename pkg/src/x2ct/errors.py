"""Exception types shared across the package.

The CLI maps these onto its exit codes: config 2, data 3, numeric 4,
contract 5.
"""


class ConfigError(ValueError):
    """Bad configuration: unknown key, unparsable or out-of-range value."""


class DataError(RuntimeError):
    """Missing or malformed input data, or an unusable output location."""


class NumericError(RuntimeError):
    """Non-finite values where finite ones are required (NaN loss/gradient)."""


class ContractError(RuntimeError):
    """A frozen-parameter guarantee was violated (teacher checkpoint changed)."""


class UndefinedMetricError(ValueError):
    """Metric undefined for the given inputs (e.g. single-class AUC)."""

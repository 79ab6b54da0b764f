"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage/config errors exit 1, data errors
exit 2 and numeric errors exit 3.
"""


class HelixError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(HelixError, ValueError):
    """Invalid configuration value or unknown configuration key."""


class DimensionError(HelixError, ValueError):
    """Tensor or array shapes do not agree."""


class ContractError(HelixError, ValueError):
    """A precondition of an operation was violated."""


class RangeError(HelixError, IndexError):
    """An index falls outside a table (e.g. t >= T_max for learnable PE)."""


class DataError(HelixError, ValueError):
    """Input data is malformed or cannot support the requested operation."""


class ParseError(DataError):
    """A dataset file could not be parsed; carries row/column location."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.row = row
        self.column = column


class NumericError(HelixError, ArithmeticError):
    """Non-finite values appeared in a computation."""


class CheckpointError(HelixError):
    """Base class for checkpoint corruption errors."""


class MagicError(CheckpointError):
    """File does not start with the expected magic string."""


class TruncatedError(CheckpointError):
    """File ends before the header or a tensor payload is complete."""


class ManifestError(CheckpointError):
    """Header manifest disagrees with the configuration or payload layout."""

    def __init__(self, message, tensor=None):
        super().__init__(f"{message} [tensor {tensor!r}]" if tensor else message)
        self.tensor = tensor

"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, InputError /
ShapeError / FormatError -> 3, NumericError -> 4.
"""


class FedmiaError(Exception):
    """Base class for all errors raised by this package."""


class InputError(FedmiaError):
    """An argument or data value violates a precondition."""


class ShapeError(FedmiaError):
    """Array dimensions do not line up."""


class FormatError(FedmiaError):
    """A data file is malformed or truncated."""


class ConfigError(FedmiaError):
    """An experiment configuration is invalid."""


class NumericError(FedmiaError):
    """A computation produced non-finite values."""

"""Exception hierarchy shared across the package."""


class ChanfreeError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ChanfreeError):
    """Invalid shapes, settings, or model state."""


class InputError(ChanfreeError, ValueError):
    """Invalid user-supplied data (ids, labels, masks, files)."""


class NumericError(ChanfreeError, ArithmeticError):
    """NaN or Inf encountered where finite values are required."""


class ParseError(InputError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DescriptorError(InputError):
    """Dataset descriptor does not match the data file."""

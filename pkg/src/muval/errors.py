"""Exception hierarchy shared across the package."""


class MuvalError(Exception):
    """Base class for all package errors."""


class DimensionError(MuvalError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(MuvalError, ValueError):
    """A documented precondition was violated."""


class NumericError(MuvalError, ArithmeticError):
    """A non-finite value appeared where finite values are required."""


class FormatError(MuvalError, ValueError):
    """A file does not follow its declared binary or text layout."""


class ParseError(FormatError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ConfigError(MuvalError, ValueError):
    """A configuration cannot be realised (bad extents, single class, ...)."""

"""Exception types shared across the package."""


class ASMError(Exception):
    """Base class for all errors raised by asmlab."""


class ConfigError(ASMError, ValueError):
    pass


class ShapeError(ASMError, ValueError):
    pass


class LabelError(ASMError, ValueError):
    pass


class NumericFault(ASMError, ArithmeticError):
    """Raised when a loss or gradient becomes non-finite."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ParseError(ASMError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line

"""Exception types shared across the package."""


class PortlabError(Exception):
    """Base class for all package errors."""


class ShapeError(PortlabError, ValueError):
    pass


class NumericError(PortlabError, ArithmeticError):
    pass


class ConstraintError(PortlabError, ValueError):
    pass


class DataError(PortlabError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FetchError(PortlabError, RuntimeError):
    pass


class TrainingError(PortlabError, RuntimeError):
    pass


class ConfigError(PortlabError, ValueError):
    pass


class BacktestError(PortlabError, RuntimeError):
    pass


class ActionError(PortlabError, ValueError):
    pass


class StrategyError(PortlabError, RuntimeError):
    """An allocation failure tagged with the strategy that raised it."""

    def __init__(self, strategy: str, cause: BaseException):
        self.strategy = strategy
        self.cause = cause
        super().__init__(f"{strategy}: {type(cause).__name__}: {cause}")

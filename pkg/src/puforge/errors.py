"""Exception hierarchy shared by all puforge modules.

Each class carries the CLI exit code it maps to.
"""


class PUForgeError(Exception):
    exit_code = 1


class ConfigError(PUForgeError, ValueError):
    exit_code = 2


class DataError(PUForgeError, ValueError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ShapeError(PUForgeError, ValueError):
    exit_code = 3


class NumericError(PUForgeError, ArithmeticError):
    exit_code = 4


class ScheduleError(ConfigError):
    pass


class SelectionError(PUForgeError, ValueError):
    exit_code = 4


class RunFailure(PUForgeError, RuntimeError):
    exit_code = 4

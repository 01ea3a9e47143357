"""Exception hierarchy; the command line maps each family to an exit code."""


class EegSsmError(Exception):
    exit_code = 1


class ConfigError(EegSsmError, ValueError):
    exit_code = 2


class DataError(EegSsmError, ValueError):
    exit_code = 3


class NumericalError(EegSsmError, FloatingPointError):
    exit_code = 4

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step

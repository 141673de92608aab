from .constants import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL


class PropsslException(Exception):
    """Base class for Exceptions in this package"""

    exit_code = 1


class ConfigError(PropsslException):
    exit_code = EXIT_CONFIG


class ValidationError(ConfigError):
    pass


class ArgumentError(PropsslException, ValueError):
    exit_code = EXIT_CONFIG


class DataError(PropsslException):
    exit_code = EXIT_DATA


class NumericalError(PropsslException):
    """Non-finite value during training.

    ``state`` holds what is needed to reproduce the failing step.
    """

    exit_code = EXIT_NUMERICAL

    def __init__(self, message: str, state: dict = None) -> None:
        super().__init__(message)
        self.state = state or {}

"""Exception hierarchy shared by every stage of the pipeline.

The CLI maps each family onto a process exit code, so new errors should
subclass one of the three families below rather than ``M2DError`` directly.
"""

from __future__ import annotations


class M2DError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(M2DError, ValueError):
    """Invalid configuration value, unknown key, or malformed config file."""

    exit_code = 2


class DataError(M2DError, ValueError):
    """Problem with input data: bad values, shapes, coverage, files."""

    exit_code = 3


class InvalidInputError(DataError):
    pass


class UndefinedDirectionError(DataError):
    pass


class EstimationError(DataError):
    pass


class EmptyResultError(DataError):
    pass


class CoverageError(DataError):
    pass


class DegenerateChannelError(DataError):
    pass


class TooShortError(DataError):
    pass


class ShapeError(DataError):
    pass


class FileError(DataError, OSError):
    pass


class NotSupportedError(M2DError, NotImplementedError):
    exit_code = 2


class TrainingError(M2DError, RuntimeError):
    """Non-finite loss, parameters or gradients during optimisation."""

    exit_code = 4


class NumericalError(TrainingError):
    pass


class DivergenceError(TrainingError):
    pass

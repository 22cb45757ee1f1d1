"""Exception hierarchy.

``DataError`` subclasses signal bad inputs (files, shapes, ranges); the CLI
maps them to exit code 2.
"""


class DataError(Exception):
    """Input data or configuration is malformed or inconsistent."""


class SpecParseError(DataError):
    pass


class ShapeMismatchError(DataError):
    pass


class ContainerFormatError(DataError):
    pass


class ProbabilityRangeError(DataError):
    pass


class InfeasibleTargetError(DataError):
    pass


class PackingError(DataError):
    pass


class CompensationUnavailableError(DataError):
    """Drift compensation was requested for a layer without batch norm."""

"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class SpectraError(Exception):
    """Base class for every error raised by this package."""


class GeometryError(SpectraError, ValueError):
    pass


class ParameterError(SpectraError, ValueError):
    pass


class ShellError(SpectraError, ValueError):
    """A lattice vector lies outside the configured energy shell."""


class InsufficientSamplesError(SpectraError):
    pass


class PotentialError(SpectraError, ValueError):
    pass


class DomainError(SpectraError, ValueError):
    """A point lies outside the box."""


class ConsistencyError(SpectraError):
    """An internal invariant did not hold."""


class TruncationError(SpectraError, ValueError):
    pass


class ContractError(SpectraError, ValueError):
    pass


class SolverError(SpectraError):
    pass


class LabelingError(SpectraError):
    def __init__(self, message: str, overlaps: dict | None = None):
        super().__init__(message)
        self.overlaps = overlaps or {}


class CoverageError(SpectraError):
    pass


class SmallDenominatorError(SpectraError):
    def __init__(self, message: str, state=None, denominator: float | None = None):
        super().__init__(message)
        self.state = state
        self.denominator = denominator


class NoMatchError(SpectraError):
    pass


class ResourceError(SpectraError):
    def __init__(self, message: str, required: int | None = None):
        super().__init__(message)
        self.required = required


class ConfigError(SpectraError, ValueError):
    pass

"""Exception hierarchy for windowabc."""


class WindowAbcError(Exception):
    """Base class for all errors raised by this package."""


class InvalidStateError(WindowAbcError, ValueError):
    """A state or parameter vector is non-finite or outside its domain."""


class InfeasiblePopulationError(WindowAbcError, ValueError):
    """The sampled population is too small to hold the observed compartments."""


class DivergenceError(WindowAbcError, ArithmeticError):
    """Integration produced a non-finite or strongly negative compartment."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class InsufficientDataError(WindowAbcError, ValueError):
    """The series is too short for the requested windowing."""


class DegeneratePriorError(WindowAbcError, ValueError):
    """A prior cannot be sampled or has collapsed support."""


class StalledInferenceError(WindowAbcError, RuntimeError):
    """ABC-SMC exhausted its simulation budget without accepting a particle."""

    def __init__(self, message, tolerance=None):
        super().__init__(message)
        self.tolerance = tolerance


class DegenerateDenominatorError(WindowAbcError, ZeroDivisionError):
    """A ratio statistic was requested with a zero denominator."""


class IncomparableRunsError(WindowAbcError, ValueError):
    """Two run reports do not cover the same windows."""


class UnknownRegionError(WindowAbcError, KeyError):
    """The requested region is absent from the input file."""


class SeriesParseError(WindowAbcError, ValueError):
    """A row of the input CSV could not be parsed."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line

"""Exception hierarchy.

The CLI maps these onto process exit codes: ``FormatError`` and
``InvalidArgumentError`` are data errors (3), ``NumericalError`` and its
subclasses are numerical failures (4).
"""


class SemshapeError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(SemshapeError, ValueError):
    """An argument has the wrong shape, size or value."""


class FormatError(SemshapeError, ValueError):
    """A file on disk does not conform to its documented format."""


class NumericalError(SemshapeError, ArithmeticError):
    """A computation cannot proceed for numerical reasons."""


class SingularityError(NumericalError):
    """A derivative is undefined, e.g. at a zero-length segment."""


class CapacityError(NumericalError):
    """A requested dense matrix exceeds the configured size cap."""


class RankDeficiencyWarning(UserWarning):
    """Least-squares system had fewer independent rows than unknowns."""

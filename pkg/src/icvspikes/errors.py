"""Exception hierarchy shared by every module.

The CLI maps each class to a distinct exit code, so library code raises the
most specific class that applies.
"""


class IcvSpikesError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InputError(IcvSpikesError, ValueError):
    """Invalid arguments or malformed input data."""

    exit_code = 2


class NumericalError(IcvSpikesError, ArithmeticError):
    """A numerical routine failed or produced an unusable result."""

    exit_code = 3


class SingularityError(NumericalError):
    """Evaluation point coincides with a pole (an atom or an eigenvalue)."""


class SearchError(NumericalError):
    """A bounded search exhausted its range without a solution."""


class ResourceError(IcvSpikesError, MemoryError):
    """A request would exceed a configured resource budget."""

    exit_code = 4

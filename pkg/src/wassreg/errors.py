"""Exception hierarchy.

Every error raised deliberately by the library derives from
:class:`WassregError`.  The CLI maps the subclasses onto exit codes.
"""


class WassregError(Exception):
    """Base class for library errors."""


class InputError(WassregError, ValueError):
    """Malformed or missing input (bad file, missing curves, too few samples)."""


class DimensionError(InputError):
    """Array shapes or grids do not match."""


class DomainError(InputError):
    """An argument lies outside its admissible range."""


class DesignError(WassregError, ArithmeticError):
    """The predictor design is singular or otherwise unusable."""


class DegenerateError(WassregError, ArithmeticError):
    """A numerical quantity degenerated (zero variance, zero kernel)."""


class UnsupportedMethodError(WassregError):
    """The requested method cannot be used with this data."""

"""Exception hierarchy shared by the library and the CLI."""


class SOEMError(Exception):
    """Base class for all package errors."""


class ValidationError(SOEMError, ValueError):
    """Bad input: wrong shapes, out-of-range parameters, malformed files."""


class NumericalError(SOEMError, ArithmeticError):
    """A computation is undefined or diverged (e.g. vertical LRF eigenspace)."""

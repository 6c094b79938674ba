"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: validation errors exit with 2,
numerical failures with 3, and I/O or protocol failures with 4.
"""


class DrusError(Exception):
    """Base class for all package errors."""


class ValidationError(DrusError, ValueError):
    """Invalid configuration, shapes or arguments."""


class NumericalError(DrusError, ArithmeticError):
    """A computation produced non-finite values or failed to converge."""


class MemoryBudgetError(ValidationError):
    """Requested operator would exceed the configured memory budget."""


class ProtocolError(DrusError, OSError):
    """Malformed frame or container on the wire or on disk."""


class DenoiserTimeout(ProtocolError, TimeoutError):
    """External denoiser did not answer within the configured timeout."""


class ShapeMismatchError(ProtocolError):
    """External denoiser answered with an image of the wrong shape."""

"""Exception types raised across the package."""


class LatFormerError(Exception):
    """Base class for all package errors."""


class InvalidShape(LatFormerError, ValueError):
    """An action was requested on a lattice shape it cannot act on."""


class InvalidFactor(LatFormerError, ValueError):
    """A scaling factor below 2 was requested."""


class NumericalInstability(LatFormerError, ArithmeticError):
    """A Fourier-route mask entry landed inside the rounding guard band."""


class SizeOverflow(LatFormerError, ValueError):
    """A Kronecker product would exceed the configured maximum size."""


class DegenerateRow(LatFormerError, ArithmeticError):
    """A masked attention row has (structurally) zero total weight."""


class NonFinite(LatFormerError, ArithmeticError):
    """Training produced a NaN or infinite loss.

    The partial loss history is attached as ``history``.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class EmptyPool(LatFormerError, ValueError):
    """A task was requested from an empty grid pool."""


class ParseError(LatFormerError, ValueError):
    """A task file could not be decoded."""


class ValidationError(LatFormerError, ValueError):
    """A grid failed validation (ragged rows or out-of-range colours)."""

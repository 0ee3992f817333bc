"""Exception hierarchy shared by every BELT module."""


class BeltError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(BeltError, ValueError):
    """An input violates a documented precondition on shape, symmetry or range."""


class PreconditionError(ValidationError):
    """An algorithmic precondition fails, e.g. an overlap smaller than the rank."""


class NumericalError(BeltError, ArithmeticError):
    """A numerical routine failed to converge or produced unusable output."""


class CompletionError(BeltError):
    """Some missing entries could not be imputed by any source pair.

    Attributes
    ----------
    uncovered : list of tuple of int
        Global entity id pairs ``(i, j)`` with ``i < j`` left without an estimate.
    skipped_pairs : list of tuple
        ``(s, k, overlap)`` for every source pair rejected for insufficient overlap.
    """

    def __init__(self, message, uncovered=(), skipped_pairs=()):
        super().__init__(message)
        self.uncovered = list(uncovered)
        self.skipped_pairs = list(skipped_pairs)


class GenerationError(BeltError):
    """Simulated data could not be generated under the requested constraints."""

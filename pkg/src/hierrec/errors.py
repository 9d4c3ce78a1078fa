"""Exception hierarchy shared by every module.

The CLI maps :class:`InputError` to exit code 2 and :class:`NumericalError`
(and its subclasses) to exit code 3.
"""


class ReconciliationError(Exception):
    """Base class for all package errors."""


class InputError(ReconciliationError, ValueError):
    """Malformed or inconsistent user input (structure, files, arguments)."""


class NumericalError(ReconciliationError, ArithmeticError):
    """A factorization or solve failed, or a result violated its invariants."""


class InfeasibleError(NumericalError):
    """The constraint set of a bound-constrained solve is empty."""


class ConvergenceError(NumericalError):
    """An iterative solve hit its iteration cap."""

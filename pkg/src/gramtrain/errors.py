"""Exception hierarchy. The CLI maps each class to an exit code."""


class GramtrainError(Exception):
    exit_code = 1


class UsageError(GramtrainError, ValueError):
    """Bad arguments: dimension mismatch, out-of-range hyperparameter, empty batch."""

    exit_code = 1


class DataError(GramtrainError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 2


class NumericalError(GramtrainError, ArithmeticError):
    """Non-convergence or non-finite values."""

    exit_code = 3

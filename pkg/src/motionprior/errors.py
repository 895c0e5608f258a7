"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class MotionPriorError(Exception):
    """Base class for all package errors."""


class InputError(MotionPriorError, ValueError):
    """Rejected input: bad shape, out-of-range argument, violated precondition."""


class ParseError(InputError):
    """Malformed file content. ``line`` is 1-based, or None for whole-file problems."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class WiringError(InputError):
    """Two components connected between the wrong spaces (tag mismatch)."""


class NumericalError(MotionPriorError, ArithmeticError):
    """Numerical conditioning failure, e.g. Cholesky failing after max jitter."""


class OptimizationDiverged(NumericalError):
    """Objective or gradient became non-finite during optimization."""

    def __init__(self, message: str, iteration: int | None = None):
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)


class DegenerateWeightsError(NumericalError):
    """Every particle likelihood underflowed to zero."""

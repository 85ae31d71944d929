"""Exception types shared across the package."""


class CtfError(Exception):
    """Base class for errors raised by this package."""


class SingularDesignError(CtfError):
    """A (centered) design matrix is rank deficient; projections are refused
    rather than silently pseudo-inverted."""


class InfeasibleThresholdsError(CtfError):
    """No threshold configuration satisfies the error-rate constraint."""


class EmptyConditioningSetError(CtfError):
    """The sampled conditioning set of a conditional permutation statistic is
    empty; the cell threshold is too small for the number of sampled
    permutations."""


class FileFormatError(CtfError):
    """A data or spec file does not match its documented format."""

    def __init__(self, path: str, message: str, line: int | None = None):
        self.path = path
        self.line = line
        where = f"{path}:{line}" if line is not None else path
        super().__init__(f"{where}: {message}")

"""Exception types shared across the package."""


class PGMError(ValueError):
    """Base class for all errors raised by pgmkit."""


class EmptyDatasetError(PGMError):
    def __init__(self):
        super().__init__("empty dataset")


class EpsilonError(PGMError):
    def __init__(self, eps=None):
        msg = "epsilon out of range"
        if eps is not None:
            msg += f" (got {eps!r})"
        super().__init__(msg)


class UnsortedInputError(PGMError):
    def __init__(self, detail=""):
        super().__init__("unsorted input" + (f": {detail}" if detail else ""))


class OracleSizeError(PGMError):
    def __init__(self, n, bound):
        super().__init__(f"oracle size limit: {n} keys > {bound}")


class InvalidProbabilityError(PGMError):
    def __init__(self, detail=""):
        super().__init__("invalid probability" + (f": {detail}" if detail else ""))


class InsufficientSamplesError(PGMError):
    def __init__(self):
        super().__init__("insufficient samples")


class FormatError(PGMError):
    """Malformed dataset or index stream."""


class BadMagicError(FormatError):
    def __init__(self, got):
        super().__init__(f"bad magic: {got!r}")


class VersionError(FormatError):
    def __init__(self, got):
        super().__init__(f"version mismatch: {got}")


class TruncatedError(FormatError):
    def __init__(self, what):
        super().__init__(f"truncated stream while reading {what}")


class InfeasibleBudgetError(PGMError):
    """No epsilon in the search interval meets the budget.

    ``best`` carries the minimum achievable space (bytes) or time (seconds).
    """

    def __init__(self, msg, best):
        super().__init__(msg)
        self.best = best

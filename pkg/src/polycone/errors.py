class BudgetExceeded(RuntimeError):
    """An enumeration or simulation ran past its configured node budget."""


class NonConvergence(ArithmeticError):
    """A root find, Newton solve or series failed to reach its tolerance."""

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)

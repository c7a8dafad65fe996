"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so library code should raise
them instead of bare ValueError/RuntimeError wherever the failure class
matters to a caller.
"""


class InvalidParameterError(ValueError):
    """An argument violates a documented precondition."""


class NumericalError(RuntimeError):
    """A linear-algebra or floating-point failure that survived retries.

    Carries optional context (subset size, iteration) so long runs can be
    diagnosed without a debugger.
    """

    def __init__(self, message, *, n=None, iteration=None):
        if n is not None:
            message += f" [n={n}]"
        if iteration is not None:
            message += f" [iteration={iteration}]"
        super().__init__(message)
        self.n = n
        self.iteration = iteration

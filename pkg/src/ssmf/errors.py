"""Exception hierarchy shared by all modules."""


class SsmfError(Exception):
    """Base class for every error raised by this package."""


class InvalidDimensions(SsmfError, ValueError):
    pass


class InvalidInput(SsmfError, ValueError):
    pass


class InvalidSparsity(SsmfError, ValueError):
    pass


class InvalidSupport(SsmfError, ValueError):
    pass


class InvalidIndex(SsmfError, IndexError):
    pass


class OracleTooLarge(SsmfError, ValueError):
    pass


class NumericalBreakdown(SsmfError, ArithmeticError):
    """Raised when a solver meets a non-finite objective.

    The partial trace collected up to the failure is attached as ``trace``.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []


class InvalidSpec(SsmfError, ValueError):
    pass


class BadMagic(SsmfError, ValueError):
    pass


class TruncatedFile(SsmfError, ValueError):
    pass


class InvalidLabel(SsmfError, ValueError):
    pass


class NotEnoughSamples(SsmfError, ValueError):
    pass

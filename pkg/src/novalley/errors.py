"""Exception hierarchy. CLI exit codes key off the two base families."""


class NoValleyError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(NoValleyError, ValueError):
    """Bad input: malformed data, out-of-range values, non-finite entries."""


class ContractViolation(ValidationError):
    """Shapes or call preconditions do not match."""


class UnsupportedSizeError(ContractViolation):
    pass


class InfeasibleError(ValidationError):
    """The request cannot be met for this network (e.g. fewer skip units than samples)."""


class AssumptionError(ValidationError):
    """The network/data pair violates a structural requirement of the construction."""


class DegenerateDataError(ValidationError):
    """Samples (or features computed from them) collide where distinct values are required."""


class ParseError(ValidationError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(NoValleyError, ArithmeticError):
    """A numerical procedure failed: rank deficiency, divergence."""


class RankDeficientError(NumericalError):
    pass


class DivergenceError(NumericalError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []

"""Exception hierarchy shared by every module."""


class LabError(Exception):
    """Base class for all library errors."""


class InvalidArgument(LabError, ValueError):
    pass


class NumericError(LabError, ArithmeticError):
    pass


class DomainError(LabError, ValueError):
    pass


class NoBlowupDetected(NumericError):
    pass


class NotApplicable(LabError):
    pass


class FitRejected(LabError):
    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


class CoercivityViolation(NumericError):
    pass


class ModulationFailure(LabError):
    pass


class ParameterSaturation(ModulationFailure):
    pass


class Divergence(NumericError):
    def __init__(self, msg, last_state=None, last_s=None):
        super().__init__(msg)
        self.last_state = last_state
        self.last_s = last_s


class UndefinedRatio(LabError, ZeroDivisionError):
    pass


class NoLimit(LabError):
    pass

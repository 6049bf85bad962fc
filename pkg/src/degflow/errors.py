"""Exception hierarchy shared by all degflow modules."""


class DegflowError(Exception):
    """Base class for every error raised by degflow."""


class InvalidFieldError(DegflowError):
    pass


class PositivityLossError(DegflowError):
    def __init__(self, message, index=None, value=None):
        super().__init__(message)
        self.index = index
        self.value = value


class InvalidInitialDataError(DegflowError):
    pass


class WindowEmptyError(DegflowError):
    pass


class NoDeltaError(DegflowError):
    def __init__(self, message, worst_t=None, worst_eig=None):
        super().__init__(message)
        self.worst_t = worst_t
        self.worst_eig = worst_eig


class NotAdmissibleError(DegflowError):
    pass


class NotApplicableError(DegflowError):
    pass


class InvalidMeasureError(DegflowError):
    pass


class LadderFailureError(DegflowError):
    def __init__(self, message, rung=None):
        super().__init__(message)
        self.rung = rung


class InvalidRHSError(DegflowError):
    pass


class SolveFailureError(DegflowError):
    pass


class FlowFailureError(DegflowError):
    """Raised when time stepping cannot continue; carries the last good state."""

    def __init__(self, message, last_state=None, rung=None):
        super().__init__(message)
        self.last_state = last_state
        self.rung = rung


class NeedSamplesError(DegflowError):
    pass


class InterleavingNotFoundError(DegflowError):
    pass


class HypothesisNotSatisfied(DegflowError):
    """A check refused to run because its analytic hypothesis fails on the grid.

    The partially filled report is attached so callers can still emit it.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(DegflowError):
    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line

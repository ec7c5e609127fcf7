"""Exception hierarchy shared by the package and mapped to CLI exit codes."""


class RecloopError(Exception):
    """Base class for all errors raised by recloop."""


class ParseError(RecloopError, ValueError):
    """A malformed input line."""

    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class DataError(RecloopError, ValueError):
    """Well-formed input carrying values the model cannot accept."""


class RangeError(DataError):
    """A rating outside [1, 5]."""

    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class MissingMappingError(DataError, KeyError):
    def __init__(self, items):
        self.items = sorted(items)
        shown = ", ".join(str(i) for i in self.items[:20])
        more = "" if len(self.items) <= 20 else f" (+{len(self.items) - 20} more)"
        super().__init__(f"no group mapping for item(s): {shown}{more}")

    def __str__(self):
        return self.args[0]


class CapacityError(RecloopError, ValueError):
    """More recommendations requested than there are candidates."""


class EligibilityError(DataError):
    """No user qualifies for the ranking-assumption test."""


class DegenerateVarianceError(DataError):
    """Both samples have zero variance, so the t statistic is undefined."""


class InvariantViolation(RecloopError, AssertionError):
    """A trace breaks a structural invariant (signals a bug upstream)."""


class SchemaError(DataError):
    """A trace file whose columns do not match the expected schema."""


class TrainingError(RecloopError, ArithmeticError):
    """SGD produced non-finite factors."""

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}: non-finite factors")

"""Exception hierarchy.

The CLI maps these onto exit codes: configuration problems exit 2,
violated mathematical preconditions exit 3, solver failures exit 4.
"""


class LevyHomogError(Exception):
    """Base class for all package errors."""


class ConfigError(LevyHomogError, ValueError):
    """Invalid parameters or configuration."""


class DomainError(LevyHomogError, ValueError):
    """Argument outside the domain of a map (e.g. evaluating at the singularity)."""


class ParseError(LevyHomogError, ValueError):
    def __init__(self, message, position, expected=()):
        self.position = position
        self.expected = tuple(sorted(set(expected)))
        detail = f"{message} at offset {position}"
        if self.expected:
            detail += f" (expected one of: {', '.join(self.expected)})"
        super().__init__(detail)


class EvaluationError(LevyHomogError, ArithmeticError):
    """Runtime failure while evaluating an expression."""


class EstimationError(LevyHomogError):
    pass


class EmptyRuleError(LevyHomogError):
    """The density has no mass in the requested annulus."""


class ConsistencyError(LevyHomogError):
    """An assembled object violates its structural invariants."""


class PreconditionError(LevyHomogError):
    """A mathematical hypothesis (condition A, condition B, ergodicity) fails."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


class ConditionAFailure(PreconditionError):
    pass


class ErgodicityFailure(PreconditionError):
    pass


class SolverError(LevyHomogError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class RetabulationRequired(SolverError):
    """The effective operator was queried outside its tabulated range."""

    def __init__(self, message, needed_range):
        super().__init__(message)
        self.needed_range = needed_range

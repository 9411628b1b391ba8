"""Exception hierarchy.

Validation problems (bad inputs, bad scenario files) derive from
``ValidationError``; everything raised while computing derives from
``NumericError``. The CLI maps the two families to distinct exit codes.
"""


class LiaoError(Exception):
    """Base class for all package errors."""


class ValidationError(LiaoError, ValueError):
    """Malformed input or configuration."""


class NumericError(LiaoError, ArithmeticError):
    """A computation could not be completed reliably."""


class EvaluationOverflowError(NumericError):
    def __init__(self, field_name, component, point=None):
        self.field_name = field_name
        self.component = component
        self.point = point
        super().__init__(
            f"field {field_name!r}: component {component} is not finite"
            + ("" if point is None else f" at {point}")
        )


class DivergenceError(NumericError):
    def __init__(self, last_time, bound):
        self.last_time = last_time
        self.bound = bound
        super().__init__(f"state norm exceeded {bound:g}; last valid time {last_time:.17g}")


class SingularityError(NumericError):
    """Zero (or numerically zero) field vector where a direction is needed."""


class HyperbolicityPreconditionError(SingularityError):
    """A sample violates 0 < inf ||S|| (the field vanishes there)."""


class DegenerateTransportError(NumericError):
    """Pushed frame columns lost rank during a transport step."""


class InconsistencyError(NumericError):
    """Internal consistency check failed (e.g. a step factor is not triangular)."""


class InsufficientWindowError(ValidationError):
    pass


class PreconditionError(NumericError):
    pass


class OutOfChartError(NumericError):
    pass


class ChartDegeneracyError(NumericError):
    pass


class NotInNeighborhoodError(NumericError):
    """The lifted speed leaves the window [1/2, 2]."""


class NonContractionError(NumericError):
    def __init__(self, message, ratio=None):
        self.ratio = ratio
        super().__init__(message)


class DichotomyOverflowError(NumericError):
    pass


class UnreliableDeltaError(NumericError):
    pass


class ScenarioError(ValidationError):
    pass

"""Exception hierarchy shared by all modules."""


class SinkbaryError(Exception):
    """Base class for library errors."""


class InvalidMeasure(SinkbaryError, ValueError):
    pass


class DimensionMismatch(InvalidMeasure):
    pass


class NegativeWeight(InvalidMeasure):
    pass


class WeightSumOutOfTolerance(InvalidMeasure):
    pass


class EmptySupport(InvalidMeasure):
    pass


class AllZeroImage(InvalidMeasure):
    pass


class NonPositiveDefiniteCovariance(SinkbaryError, ValueError):
    pass


class LengthMismatch(SinkbaryError, ValueError):
    pass


class UnsupportedCost(SinkbaryError, ValueError):
    pass


class MaxIterationsExceeded(SinkbaryError, RuntimeError):
    """Raised only in strict mode; carries the partial result."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class NumericalOverflow(SinkbaryError, FloatingPointError):
    pass


class InnerMinimizationFailed(SinkbaryError, RuntimeError):
    pass


class EmptyCluster(SinkbaryError, RuntimeError):
    pass


class DisconnectedUnknownVertex(SinkbaryError, ValueError):
    pass

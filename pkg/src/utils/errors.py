"""Exception hierarchy shared by every ChargeCast module."""

from typing import Optional


class ChargeCastError(Exception):
    """Base class for all errors raised by the library."""


class ShapeError(ChargeCastError, ValueError):
    """Tensor or array shapes do not fit together."""


class GraphError(ChargeCastError, RuntimeError):
    """Invalid use of the autodiff tape (non-scalar loss, stale graph, missing grad)."""


class DataError(ChargeCastError, ValueError):
    """Input data is missing, malformed or too short for the requested operation."""


class LeakageError(DataError):
    """Protected test-range targets were read before final evaluation."""


class UsageError(ChargeCastError, ValueError):
    """The command line was used incorrectly."""


class FrozenParameterError(ChargeCastError, RuntimeError):
    """A frozen parameter received a gradient or changed value."""


class NumericalError(ChargeCastError, RuntimeError):
    """Training diverged or a metric is undefined."""

    def __init__(self, message: str, last_finite_epoch: Optional[int] = None):
        super().__init__(message)
        self.last_finite_epoch = last_finite_epoch

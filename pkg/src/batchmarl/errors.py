"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Invalid dimensions, parameters or configuration values."""


class DimensionError(ValueError):
    """Query or output vector does not match an ensemble's shape."""


class ConvergenceError(RuntimeError):
    """Iteration cap reached before the sup-norm dropped below epsilon.

    The partial result and its convergence trace are attached so callers can
    inspect or persist them.
    """

    def __init__(self, message, trace=None, result=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []
        self.result = result


class InconclusivePolicyError(RuntimeError):
    """Every state of a policy table holds the sentinel; nothing to generalize."""

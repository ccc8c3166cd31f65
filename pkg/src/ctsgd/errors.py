"""Exception types shared across the toolkit."""


class CtsgdError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(CtsgdError):
    """A vector or matrix did not have its declared shape."""


class NumericBlowupError(CtsgdError):
    """A non-finite value appeared during integration.

    Carries the step index and the offending component so a failed run
    can be located in a long simulation.
    """

    def __init__(self, message, step=None, component=None):
        super().__init__(message)
        self.step = step
        self.component = component


class ConfigurationError(CtsgdError):
    """Invalid model or experiment configuration."""


class ConvergenceError(CtsgdError):
    """An iterative solve failed to reach its tolerance in the allowed horizon."""


class ConditioningError(CtsgdError):
    """A matrix required to be invertible was singular or near-singular."""

"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Array dimensions do not agree with what an operation expects."""


class NonFiniteError(ArithmeticError):
    """A NaN or infinity appeared where finite numbers are required.

    ``step`` is set when the failure happened inside a model rollout.
    """

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class EmptyBufferError(ValueError):
    """Training or fitting was requested on a replay buffer with no usable data."""


class PlannerRejected(RuntimeError):
    """A trajectory optimizer could not produce a finite plan."""


class ConfigError(ValueError):
    """A run configuration is invalid; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field

"""Exception types shared across the package."""


class DivergenceError(RuntimeError):
    """A loss term, gradient, or network output stopped being finite.

    Carries the context the failure was detected in: the offending term or
    step, and (when raised from the training loop) the epoch plus the metrics
    collected so far.
    """

    def __init__(self, message: str, *, epoch: int | None = None, metrics=None):
        super().__init__(message)
        self.epoch = epoch
        self.metrics = metrics


class ConfigError(ValueError):
    """A run configuration that cannot be resolved (unknown key, bad value)."""

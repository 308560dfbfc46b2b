"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or file."""


class DeniedError(RuntimeError):
    """A transmit request cannot be granted (boundary search exhausted or
    the transmitter sits inside a protection zone)."""


class ConditioningError(RuntimeError):
    """A linear system was singular or failed its residual contract."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"non-finite training loss at epoch {epoch}")

"""Exception types shared across the toolkit."""


class MaskfuseError(Exception):
    """Base class for all toolkit errors."""


class FormatError(MaskfuseError):
    """Malformed bytes or structure in a serialized artifact."""


class ValidationError(MaskfuseError):
    """Well-formed data that violates a semantic constraint."""


class ConfigError(MaskfuseError):
    """Invalid configuration value or combination."""


class MetricUndefinedError(MaskfuseError):
    """Metric requested on data where it has no defined value."""


class TrainingDivergedError(MaskfuseError):
    """Loss became non-finite during training."""

    def __init__(self, epoch: int, step: int):
        super().__init__(f"loss diverged at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step

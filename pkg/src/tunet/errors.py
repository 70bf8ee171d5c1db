"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Tensor rank/size does not match what an operation requires."""


class ValidationError(ValueError):
    """Value-level contract violated (non-finite input, non-binary label, ...)."""


class ConfigurationError(ValueError):
    """Inconsistent or unsupported configuration."""


class WeightLoadError(RuntimeError):
    """Weight archive does not match the target model; names the offending tensor."""


class CheckpointError(RuntimeError):
    """Checkpoint file is missing pieces or malformed."""


class IngestionError(RuntimeError):
    """A dataset file could not be read; carries the file path."""


class TrainingAborted(RuntimeError):
    """Training stopped on a non-finite loss; carries the step index."""

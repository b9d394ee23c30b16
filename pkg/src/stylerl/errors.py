"""Exception types shared across the package."""


class StyleRlError(Exception):
    """Base class for all package-specific errors."""


class DescriptorSchemaError(StyleRlError):
    """A state is missing a descriptor field or a field has the wrong width."""


class ClipError(StyleRlError):
    """Base class for motion-clip problems."""


class ClipFormatError(ClipError):
    """Clip file is malformed: bad JSON, missing or unknown keys."""


class ClipDimensionError(ClipError):
    """Frame width or field dims are inconsistent."""


class ClipValueError(ClipError):
    """Clip contains non-finite values or an invalid scalar (dt, dim)."""


class EmptyDatasetError(StyleRlError):
    """Transition sampling was requested from a dataset with no clips."""


class RecordingError(StyleRlError):
    """Policy rollout recording could not produce a valid clip."""


class ConfigError(StyleRlError):
    """Run configuration is missing, malformed, or references absent files."""


class CheckpointError(StyleRlError):
    """Checkpoint blob is corrupt or has an unsupported version."""


class IncompatibleCheckpointError(CheckpointError):
    """Checkpoint does not match the current configuration."""


class TrainingDivergenceError(StyleRlError):
    """A loss or network output became non-finite during training."""

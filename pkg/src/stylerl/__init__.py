"""Multi-skill actor-critic RL with per-style adversarial motion priors.

One Gaussian policy hosts several skills selected by a one-hot style input.
Each skill's movement style is shaped by its own least-squares discriminator
trained against a motion-clip dataset; skills without data run on task reward
alone. Everything is float64 numpy and bit-reproducible under a fixed seed.
"""

__version__ = "0.1.0"

from stylerl.errors import (
    CheckpointError,
    ClipDimensionError,
    ClipError,
    ClipFormatError,
    ClipValueError,
    ConfigError,
    DescriptorSchemaError,
    EmptyDatasetError,
    IncompatibleCheckpointError,
    RecordingError,
    StyleRlError,
    TrainingDivergenceError,
)

__all__ = [
    "__version__",
    "StyleRlError",
    "DescriptorSchemaError",
    "ClipError",
    "ClipFormatError",
    "ClipDimensionError",
    "ClipValueError",
    "EmptyDatasetError",
    "RecordingError",
    "ConfigError",
    "CheckpointError",
    "IncompatibleCheckpointError",
    "TrainingDivergenceError",
]

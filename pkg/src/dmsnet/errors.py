"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration problems
exit 2, data problems exit 3, checkpoint problems exit 4.
"""


class DMSNetError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(DMSNetError):
    """A configuration value is invalid."""


class RegistryError(ConfigError):
    """Lookup of an unknown name in a component registry."""


class ShapeError(DMSNetError):
    """Tensor arguments violate a documented shape contract."""


class WeightLoadError(DMSNetError):
    """A backbone weight file is missing or cannot be read."""


class DataError(DMSNetError):
    """Problem with dataset files, schemas, or sample contents."""


class SchemaError(DataError):
    """An input table is missing required columns."""


class EmptyDatasetError(DataError):
    """No usable samples were found."""


class FormatError(DataError):
    """Image content does not match the expected format."""


class HomogeneityError(DataError):
    """Augmentation tried to pair samples with different labels."""


class LabelError(DataError):
    """A label vector violates the active task mode."""


class UndefinedMetricError(DataError):
    """A requested score is undefined for the given inputs."""


class CheckpointError(DMSNetError):
    """Checkpoint missing, corrupt, or incompatible with the config."""

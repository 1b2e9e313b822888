"""Exception hierarchy shared across the toolkit."""


class FcosError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(FcosError):
    """A graph or tensor failed shape validation; message names the layer."""


class NumericError(FcosError):
    """A forward or backward pass produced NaN/Inf values."""

    def __init__(self, message, node_id=None):
        super().__init__(message)
        self.node_id = node_id


class UsageError(FcosError):
    """An operation was called out of order or on invalid arguments."""


class ConfigError(FcosError):
    """Invalid experiment or operation configuration."""


class DegenerateDataError(FcosError):
    """Input data cannot support the requested operation (e.g. one class)."""


class RemovalRejected(FcosError):
    """A layer removal could not be made shape-consistent."""

    def __init__(self, message, node_id=None):
        super().__init__(message)
        self.node_id = node_id


class StageEmptyingError(FcosError):
    """A layer-pruning request would remove every unit of a stage."""


class CheckpointError(FcosError):
    """Base class for checkpoint/container I/O failures."""


class CheckpointFormatError(CheckpointError):
    """File is not a recognizable container (bad magic or header)."""


class CheckpointVersionError(CheckpointError):
    """Container version is not supported by this build."""


class CheckpointTruncatedError(CheckpointError):
    """Container ended before all declared records were read."""


class CheckpointChecksumError(CheckpointError):
    """Container payload does not match its trailing checksum."""


class DatasetFormatError(FcosError):
    """A dataset container violates the documented record layout."""


class PipelineError(FcosError):
    """A pipeline stage failed or resume constraints were violated."""

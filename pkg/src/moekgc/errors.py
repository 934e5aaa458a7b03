"""Error hierarchy shared across the package.

The CLI maps these onto exit codes: DatasetError/ConfigError -> 1,
NumericError (and anything unexpected) -> 2.
"""


class MoekgcError(Exception):
    """Base class for all package errors."""


class DatasetError(MoekgcError):
    """Missing files, malformed lines, dangling names, bad candidate lists."""


class ConfigError(MoekgcError):
    """Invalid or inconsistent configuration values."""


class SamplingError(MoekgcError):
    """No admissible sample exists (degenerate relation, empty partition)."""


class NumericError(MoekgcError):
    """Non-finite values, shape mismatches, optimizer failures."""


class ShapeError(NumericError):
    """Operands do not conform."""


class CheckpointError(MoekgcError):
    """Checkpoint unreadable or incompatible with the model configuration."""


class GradCheckError(MoekgcError):
    """Gradient verification could not run (e.g. non-deterministic closure)."""

"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4, CheckpointMismatchError -> 5.
"""


class NatexError(Exception):
    """Base class for all package errors."""


class ConfigError(NatexError):
    """Invalid configuration file or parameter value."""


class ParameterError(ConfigError):
    """A single argument violates its contract (bad threshold, count, ...)."""


class DataError(NatexError):
    """Problem with input data on disk or its content."""


class MeshFormatError(DataError):
    """Unparseable mesh file; message carries file/line context."""


class MissingAssetError(DataError):
    """A referenced companion file (texture, MTL, dataset entry) is absent."""


class InvalidGeometryError(DataError):
    """Mesh fails a geometric precondition (all faces degenerate, zero area)."""


class MissingUVError(DataError):
    """Operation requires UV coordinates but the mesh carries none."""


class EmptyConditionError(DataError):
    """A condition input carries no usable signal (e.g. fully transparent image)."""


class ContractViolationError(NatexError):
    """Caller broke an internal API contract (shape/anchor mismatch, empty context)."""


class NumericError(NatexError):
    """Non-finite values where finite ones are required."""


class CheckpointMismatchError(NatexError):
    """Checkpoint fails checksum/config-hash validation."""

"""
Custom Exceptions
Application-specific exception classes
"""

# CLI exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3


class ArcLabException(Exception):
    """Base exception for the angular margin laboratory"""
    exit_code = EXIT_USAGE


class ConfigurationError(ArcLabException):
    """Raised when a run configuration or CLI argument is invalid"""
    pass


class GeometryError(ArcLabException):
    """Raised when hypersphere geometry receives degenerate input"""
    pass


class ZeroVector(GeometryError):
    """Raised when a row or column is too short to normalize"""
    pass


class DimensionMismatch(GeometryError):
    """Raised when two vectors or matrices disagree in dimension"""
    pass


class InvalidDimension(GeometryError):
    """Raised when a sphere dimension is below 2"""
    pass


class MarginError(ArcLabException):
    """Raised when margin-loss inputs are out of their domain"""
    pass


class ThetaOutOfRange(MarginError):
    """Raised when an angle lies outside [0, pi]"""
    pass


class LabelOutOfRange(MarginError):
    """Raised when a class label does not index a centre column"""
    pass


class NonFiniteInput(MarginError):
    """Raised when scores contain NaN or infinity"""
    pass


class TrainingError(ArcLabException):
    """Raised when the toy training loop fails numerically"""
    exit_code = EXIT_NUMERICAL


class NonFiniteGradient(TrainingError):
    """Raised when an optimizer step receives a NaN or infinite gradient"""
    pass


class DivergenceDetected(TrainingError):
    """Raised when the training loss becomes non-finite"""
    pass


class RejectionExhausted(TrainingError):
    """Raised when class means cannot be separated within the attempt budget"""
    exit_code = EXIT_USAGE


class StatisticsError(ArcLabException):
    """Raised when angle statistics cannot be computed"""
    pass


class EmptyClass(StatisticsError):
    """Raised when a class has no samples"""
    pass


class NoPositivePairs(StatisticsError):
    """Raised when no class has two samples"""
    pass


class EmptyPairSet(StatisticsError):
    """Raised when a pair set lacks positives or negatives"""
    pass


class ShardError(ArcLabException):
    """Raised when a shard plan cannot be built"""
    pass


class InvalidShardCount(ShardError):
    """Raised when the device count is not in [1, n]"""
    pass


class CheckpointError(ArcLabException):
    """Raised when a checkpoint cannot be read or written"""
    exit_code = EXIT_IO


class ChecksumMismatch(CheckpointError):
    """Raised when the stored CRC-32 does not match the payload"""
    pass


class CheckpointFormatError(CheckpointError):
    """Raised when the header or blob sizes are inconsistent"""
    pass


class ReportError(ArcLabException):
    """Raised when a report file cannot be written"""
    exit_code = EXIT_IO

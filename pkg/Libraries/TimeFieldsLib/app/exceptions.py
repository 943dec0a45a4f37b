# TimeFieldsLib/app/exceptions.py

class TimeFieldsLibError(Exception):
    """Base exception for all library-specific errors."""
    pass

class DomainError(TimeFieldsLibError, ValueError):
    """Raised when a point lies outside the unit box or a parameter is out of range."""
    pass

class GeometryError(TimeFieldsLibError):
    """Raised when a free configuration is required but the point is occupied, or free space is empty."""
    pass

class RoadmapError(TimeFieldsLibError):
    pass

class OracleError(TimeFieldsLibError):
    """Raised when every corner of an interpolation cell is unreached by the wavefront."""
    pass

class CheckpointError(TimeFieldsLibError):
    """Raised when a checkpoint is truncated or its header does not match the expected layout."""
    pass

class MazeSpecError(TimeFieldsLibError):
    pass

class PlottingError(TimeFieldsLibError):
    pass

class ConfigError(TimeFieldsLibError):
    pass

class TrainingDivergenceError(TimeFieldsLibError):
    """
    Raised when the composite loss becomes non-finite or stays above the
    divergence threshold for too many consecutive epochs.
    """
    def __init__(self, message: str, epoch: int = -1, sample_index: int = -1, diagnostics: dict = None):
        super().__init__(message)
        self.epoch = epoch
        self.sample_index = sample_index
        self.diagnostics = diagnostics or {}

    def __str__(self):
        details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        return f"{super().__str__()} (Epoch: {self.epoch}, Sample: {self.sample_index})\n--- Diagnostics ---\n{details}"

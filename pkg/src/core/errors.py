"""
Error types for the maintenance optimization system
"""

from typing import Optional


class MaintenanceSystemError(Exception):
    """Base class for all errors raised by the system"""


class DimensionError(MaintenanceSystemError):
    """Tensor or state shapes do not line up"""


class ConfigurationError(MaintenanceSystemError):
    """Invalid configuration, optionally tied to a file location"""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.message = message
        self.path = path
        self.line = line
        super().__init__(self.__str__())

    def __str__(self) -> str:
        if self.path and self.line:
            return f"{self.path}:{self.line}: {self.message}"
        if self.path:
            return f"{self.path}: {self.message}"
        return self.message


class DomainError(MaintenanceSystemError):
    """Argument outside the domain of a function (negative age, negative CV)"""


class EpisodeError(MaintenanceSystemError):
    """Environment used outside a live episode"""


class NotReadyError(MaintenanceSystemError):
    """Replay buffer holds fewer transitions than requested"""


class TrainingError(MaintenanceSystemError):
    """Non-finite loss, gradient or parameter during training"""


class UndefinedROIError(MaintenanceSystemError):
    """ROI requested for a zero or negative cost"""


class CheckpointError(MaintenanceSystemError):
    """Checkpoint header or payload does not match the expected model"""

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        super().__init__(message)


class MetricsFormatError(MaintenanceSystemError):
    """Malformed metrics file"""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)

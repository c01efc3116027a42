"""Exception hierarchy shared by every module."""


class ZsttsError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(ZsttsError, ValueError):
    pass


class ConfigError(ZsttsError, ValueError):
    pass


class FormatError(ZsttsError):
    """A file does not match its documented container layout."""


class DataError(ZsttsError):
    """A file parses but its contents are unusable (e.g. non-finite)."""


class CheckpointError(ZsttsError):
    pass


class CheckInvalidError(ZsttsError):
    """Gradient check could not be performed (e.g. non-deterministic forward)."""


class TrainingDivergedError(ZsttsError):
    def __init__(self, message, param_name=None):
        super().__init__(message)
        self.param_name = param_name


class DegenerateDurationError(InvalidArgumentError):
    pass


class ManifestValidationError(ZsttsError):
    def __init__(self, message, record_id=None):
        super().__init__(message)
        self.record_id = record_id


class ProtocolError(ZsttsError):
    """An evaluation was requested under conditions that break its protocol."""

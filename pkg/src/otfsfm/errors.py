"""Exception types raised across the package."""


class OtfSfmError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(OtfSfmError, ValueError):
    pass


class CapacityError(OtfSfmError):
    pass


class InsufficientDataError(OtfSfmError, ValueError):
    pass


class BehindCameraError(OtfSfmError, ValueError):
    pass


class DegenerateSampleError(OtfSfmError):
    pass


class RegistrationFailed(OtfSfmError):
    """Raised when an image cannot be registered yet; the engine pools it."""


class TriangulationRejected(OtfSfmError):
    def __init__(self, reason, message=""):
        super().__init__(message or reason)
        self.reason = reason


class AlignmentError(OtfSfmError):
    pass


class ProtocolError(OtfSfmError):
    def __init__(self, message, status=1):
        super().__init__(message)
        self.status = status


class DatasetError(OtfSfmError):
    def __init__(self, message, record_index=None):
        super().__init__(message)
        self.record_index = record_index


class SceneSpecError(OtfSfmError, ValueError):
    pass

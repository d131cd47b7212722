"""Exception types shared across the package."""


class GridStateError(Exception):
    """Base class for all package errors."""


class CaseFormatError(GridStateError):
    """Raised when a case file cannot be parsed (bad syntax, missing field)."""

    def __init__(self, message, *, path=None, location=None):
        detail = message
        if location is not None:
            detail = f"{location}: {detail}"
        if path is not None:
            detail = f"{path}: {detail}"
        super().__init__(detail)
        self.path = path
        self.location = location


class CaseValidationError(GridStateError):
    """Raised when parsed case data violates a network invariant."""


class PlanError(GridStateError):
    """Raised for malformed measurement plans or unresolvable locations."""


class SingularJacobianError(GridStateError):
    """Raised when a Newton step hits a singular power-flow Jacobian."""


class SingularGainError(GridStateError):
    """Raised when the WLS gain matrix is singular (network unobservable)."""


class MaskedMeasurementError(GridStateError):
    """Raised when an estimator that needs a full vector receives masked entries."""


class TrainingDivergedError(GridStateError):
    """Raised when a training loss stops being finite."""


class ProfileError(GridStateError):
    """Raised for unusable load-profile input."""


class ConfigError(GridStateError):
    """Raised for bad experiment configuration, with the failing stage named."""


class DatasetError(GridStateError):
    """Raised when dataset generation cannot produce a usable dataset."""


class StageError(GridStateError):
    """Raised when a pipeline stage fails, naming the stage for attribution."""

    def __init__(self, stage, message):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage

class SkeliftError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SkeliftError, ValueError):
    pass


class TopologyError(ValidationError):
    pass


class ShapeError(SkeliftError, ValueError):
    pass


class DegeneratePoseError(ValidationError):
    pass


class GeometryError(ValidationError):
    """Point behind the camera or non-positive relative depth."""


class EvaluationError(SkeliftError, ArithmeticError):
    pass


class TrainingError(SkeliftError, RuntimeError):
    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class ConfigurationError(SkeliftError):
    pass

"""Exception taxonomy shared across the package."""


class EngineError(Exception):
    """Base class for all errors raised by this package."""

    category = "engine"


class ParameterError(EngineError, ValueError):
    """Model or grid parameters violate their admissible range."""

    category = "parameter"


class ShapeError(EngineError, ValueError):
    """Array arguments have inconsistent dimensions."""

    category = "shape"


class DomainError(EngineError, ValueError):
    """Scalar inputs outside the mathematical domain of an operation."""

    category = "domain"


class ConfigError(EngineError, ValueError):
    """Invalid or inconsistent run configuration."""

    category = "config"


class NumericError(EngineError, ArithmeticError):
    """Non-finite values encountered where finite values are required."""

    category = "numeric"


class StateError(EngineError, RuntimeError):
    """Operation called in the wrong order (e.g. backward before forward)."""

    category = "state"


class TrainingDiverged(NumericError):
    """Loss became non-finite during training; carries diagnostics."""

    category = "training"

    def __init__(self, message, epoch=None, batch=None, param_norm=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.param_norm = param_norm

"""Exception hierarchy shared across the package."""


class VitTadError(Exception):
    """Base class for all package errors."""


class ShapeError(VitTadError):
    """Operand shapes are incompatible for the requested operation."""


class FiniteCheckError(VitTadError):
    """A tensor contained NaN or Inf at an operation boundary."""


class ConfigurationError(VitTadError):
    """A configuration value or combination of values is invalid."""


class CheckpointError(VitTadError):
    """A checkpoint file is malformed or incompatible with the model."""


class GenerationError(VitTadError):
    """Synthetic data could not be generated under the given spec."""


class EvaluationError(VitTadError):
    """Evaluation inputs are invalid (e.g. empty ground truth)."""

from typing import Any, Dict, Optional


class GMFLDError(Exception):
    """Base error for the solver kit"""


class GridSizeError(GMFLDError):
    """Grid dimensions outside the legal range"""


class DimensionMismatchError(GMFLDError):
    """Array shape does not match the grid"""


class InvalidMeasureError(GMFLDError):
    """Density is negative, non-finite or not unit mass per column"""


class InvalidParameterError(GMFLDError):
    """Model or solver parameter violates its precondition"""


class MissingBoundsError(GMFLDError):
    """A checker needs declared bounds the scenario does not provide"""


class DivergenceError(GMFLDError):
    """Non-finite iterate detected"""

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


class ConvergenceError(GMFLDError):
    """Iteration cap reached before the stopping rule was met"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class BoundViolationError(GMFLDError):
    """Converged field violates the min/max bound"""


class ConfigError(GMFLDError):
    """Run configuration is invalid"""


class OutputError(GMFLDError):
    """Reading or writing a result file failed"""

    def __init__(self, message: str, path: str):
        super().__init__(f"{message}: {path}")
        self.path = path

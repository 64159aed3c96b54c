"""Exception types shared across the toolkit."""

from __future__ import annotations


class RobinShapeError(Exception):
    """Base class for all toolkit errors."""


class SourceRangeError(RobinShapeError, ValueError):
    """A radius falls outside the range where a source is defined."""


class QuadratureError(RobinShapeError, ArithmeticError):
    """Adaptive quadrature failed to reach its tolerance."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class GeometryError(RobinShapeError, ValueError):
    """A domain description is not a valid star-shaped domain."""


class ConfigurationError(RobinShapeError, ValueError):
    """Invalid solver or experiment configuration."""


class SolverError(RobinShapeError, ArithmeticError):
    """A linear solve failed or produced an unacceptable residual."""

"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Matrix/vector shapes are inconsistent with what the operation expects."""


class NumericError(ArithmeticError):
    """Input is numerically unusable (non-finite, singular, not PD, ...)."""


class GeometryError(ValueError):
    """Scene geometry is degenerate (coincident endpoints, bad grid, ...)."""


class ConfigError(ValueError):
    """A scenario configuration violates one of its invariants."""


class RankViolationError(RuntimeError):
    """A lifted matrix ended an optimization with rank above its budget."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals if residuals is not None else {}


class ExtractionError(RuntimeError):
    """No feasible rank-one candidate could be extracted from a lifted block."""

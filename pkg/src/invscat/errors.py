"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid geometry, discretization or parameter choice."""


class IngestionError(ValueError):
    """A target or data file could not be read or resampled."""


class SingularMapError(ArithmeticError):
    """A pointwise contrast map hit a near-zero denominator.

    ``cells`` holds the flat indices of the offending cells.
    """

    def __init__(self, message, cells=()):
        super().__init__(message)
        self.cells = list(cells)


class SolverError(ArithmeticError):
    """A linear system was singular or too ill-conditioned to trust."""

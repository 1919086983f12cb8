"""2D TM inverse scattering with alternative state-equation rewritings."""
from .domain import BackgroundMedium, ContrastMap, Grid, ProbeRing, build_grid, disc_grid
from .errors import ConfigurationError, IngestionError, SingularMapError, SolverError
from .models import ModelKind, ModifiedModel, build_modified_model

__version__ = "0.1.0"

__all__ = ["BackgroundMedium", "ContrastMap", "Grid", "ProbeRing", "build_grid", "disc_grid",
           "ConfigurationError", "IngestionError", "SingularMapError", "SolverError",
           "ModelKind", "ModifiedModel", "build_modified_model"]

"""surgeplan: hospital-system capacity planning and surge/transfer optimization."""

__version__ = "0.1.0"

from .domain import (  # noqa: F401
    DEFAULT_LEVEL_NAMES,
    POPULATION_TAGS,
    CensusSeed,
    DemandSeries,
    Horizon,
    HospitalProfile,
    InfeasibleTransferError,
    ProjectionResult,
    SurgeLevelLadder,
    SurgeplanError,
    TransferMatrixSeries,
    ValidationError,
    project,
    project_admissions,
    project_census,
    project_discharges,
    required_levels,
)

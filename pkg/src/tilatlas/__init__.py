"""Patch-grid probability map toolkit for whole-slide image analytics.

Builds per-patch tumor and lymphocyte probability maps, applies block
aggregation, fuses them into combined RGB maps, evaluates against polygon
truth, estimates rater/machine concordance, and serves heatmaps over HTTP.
"""

from .errors import (
    BootstrapFailureError,
    ConflictError,
    GeometryMismatchError,
    MalformedMapError,
    NotFoundError,
    PredictionFileError,
    PredictionRecordError,
    TilAtlasError,
    UndefinedEstimateError,
)
from .gridmap import (
    AggregationConfig,
    CombinedMap,
    GridGeometry,
    LabelMap,
    PredictionRecord,
    ProbabilityMap,
    TissueMask,
    aggregate,
    combine,
    decode_combined,
    grid_from_slide,
    map_from_predictions,
    threshold,
    til_in_tumor_fraction,
)

__version__ = "0.1.0"

__all__ = [
    "AggregationConfig",
    "BootstrapFailureError",
    "CombinedMap",
    "ConflictError",
    "GeometryMismatchError",
    "GridGeometry",
    "LabelMap",
    "MalformedMapError",
    "NotFoundError",
    "PredictionFileError",
    "PredictionRecord",
    "PredictionRecordError",
    "ProbabilityMap",
    "TilAtlasError",
    "TissueMask",
    "UndefinedEstimateError",
    "aggregate",
    "combine",
    "decode_combined",
    "grid_from_slide",
    "map_from_predictions",
    "threshold",
    "til_in_tumor_fraction",
    "__version__",
]

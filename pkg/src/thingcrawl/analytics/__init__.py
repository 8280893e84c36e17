"""Density, drift, update, overlap and query-log analytics."""

from .density import DensityMatrix, density, density_from_points
from .emd import DriftScore, emd, gap_score
from .overlap import id_sets, inclusiveness
from .querylog import KeywordStats, keyword_stats, load_category_map, parse_query_log, per_day_counts, query_density
from .updates import UpdateRatioReport, update_ratio
from .drift import drift_series

__all__ = [
    "DensityMatrix",
    "DriftScore",
    "KeywordStats",
    "UpdateRatioReport",
    "density",
    "density_from_points",
    "drift_series",
    "emd",
    "gap_score",
    "id_sets",
    "inclusiveness",
    "keyword_stats",
    "load_category_map",
    "parse_query_log",
    "per_day_counts",
    "query_density",
    "update_ratio",
]

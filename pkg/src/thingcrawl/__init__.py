"""Grid-scheduled crawling of geo-indexed IoT sources, with a simulated source farm and analytics."""

from .geo import BoundingBox, GeoPoint, QueryLogEntry, Snapshot, ThingRecord, box_contains, validate_point
from .grid import GridPlan, ScanQueue, Segment, build_queue, make_grid, update_weights
from .pipeline import RoundConfig, lookup_enricher, run_campaign, run_round
from .source import SourceDescriptor, fetch_segment, fetch_segment_paged, qualify, refine
from .store import SnapshotStore

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "GeoPoint",
    "GridPlan",
    "QueryLogEntry",
    "RoundConfig",
    "ScanQueue",
    "Segment",
    "Snapshot",
    "SnapshotStore",
    "SourceDescriptor",
    "ThingRecord",
    "box_contains",
    "build_queue",
    "fetch_segment",
    "fetch_segment_paged",
    "lookup_enricher",
    "make_grid",
    "qualify",
    "refine",
    "run_campaign",
    "run_round",
    "update_weights",
    "validate_point",
]

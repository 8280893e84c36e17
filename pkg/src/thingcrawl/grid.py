"""Grid segmentation of a crawl region and the weighted scan queue built from it."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

from .analytics.density import DensityMatrix, grid_edges
from .errors import DimensionMismatch, InvalidMargin, InvalidRegion
from .geo import BoundingBox, GeoPoint

__all__ = ["Segment", "GridPlan", "ScanQueue", "SchedConfig", "make_grid", "update_weights", "build_queue"]

MARGIN_MODES = ("inset", "overlap")
# hard ceiling on repeats so one vanishing weight cannot blow the queue up
MULTIPLICITY_CEILING = 1000


@dataclass(frozen=True)
class Segment:
    index: tuple[int, int]
    bounds: BoundingBox
    fetch_bounds: BoundingBox
    weight: float = 1.0
    empty_rounds: int = 0


@dataclass(frozen=True)
class GridPlan:
    region: BoundingBox
    rows: int
    cols: int
    margin_fraction: float
    segments: tuple[Segment, ...]
    margin_mode: str = "inset"

    def __iter__(self) -> Iterator[Segment]:
        return iter(self.segments)

    def __len__(self) -> int:
        return len(self.segments)

    def segment(self, index: tuple[int, int]) -> Segment:
        r, c = index
        return self.segments[r * self.cols + c]

    def weights(self) -> np.ndarray:
        return np.array([s.weight for s in self.segments], dtype=float).reshape(self.rows, self.cols)

    def to_json(self) -> dict:
        return {
            "region": self.region.to_json(),
            "rows": self.rows,
            "cols": self.cols,
            "margin_fraction": self.margin_fraction,
            "margin_mode": self.margin_mode,
            "segments": [
                {
                    "index": list(s.index),
                    "bounds": s.bounds.to_json(),
                    "fetch_bounds": s.fetch_bounds.to_json(),
                    "weight": s.weight,
                    "empty_rounds": s.empty_rounds,
                }
                for s in self.segments
            ],
        }


@dataclass(frozen=True)
class ScanQueue:
    entries: tuple[tuple[int, int], ...] = ()

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def multiplicity(self, index: tuple[int, int]) -> int:
        return sum(1 for e in self.entries if e == tuple(index))

    def to_json(self) -> dict:
        return {"entries": [list(e) for e in self.entries]}


@dataclass(frozen=True)
class SchedConfig:
    alpha: float = 1.0
    beta: float = 1.0
    prune_threshold: float = 0.0
    revisit_every: int = 10
    max_multiplicity: int | None = None


def _edges(lo: float, hi: float, n: int) -> list[float]:
    return [float(e) for e in grid_edges(lo, hi, n)]


def make_grid(region: BoundingBox, rows: int, cols: int, margin_fraction: float = 0.01,
              margin_mode: str = "inset") -> GridPlan:
    """Tile ``region`` into ``rows`` x ``cols`` equal segments.

    With ``margin_mode="inset"`` each fetch area is the segment shrunk by
    ``margin_fraction`` of the cell size on every side, so fetch areas never
    touch. ``"overlap"`` grows the fetch area by the same amount instead
    (clipped to the region), which keeps coverage complete and leaves boundary
    duplicates to the pipeline's dedup.
    """
    if region.point or region.height <= 0 or region.width <= 0:
        raise InvalidRegion("grid region must have positive area")
    if rows < 1 or cols < 1:
        raise InvalidRegion(f"grid needs rows, cols >= 1, got {rows}x{cols}")
    if not (0.0 <= margin_fraction < 0.25) or math.isnan(margin_fraction):
        raise InvalidMargin(f"margin fraction must lie in [0, 0.25), got {margin_fraction}")
    if margin_mode not in MARGIN_MODES:
        raise InvalidMargin(f"unknown margin mode {margin_mode!r}")

    lat_edges = _edges(region.min_lat, region.max_lat, rows)
    lon_edges = _edges(region.min_lon, region.max_lon, cols)
    d_lat = margin_fraction * region.height / rows
    d_lon = margin_fraction * region.width / cols
    segments = []
    for r in range(rows):
        for c in range(cols):
            lo = GeoPoint(lat_edges[r], lon_edges[c])
            hi = GeoPoint(lat_edges[r + 1], lon_edges[c + 1])
            bounds = BoundingBox(lo, hi)
            if margin_fraction == 0:
                fetch = bounds
            elif margin_mode == "inset":
                fetch = BoundingBox.from_bounds(lo.latitude + d_lat, lo.longitude + d_lon,
                                                hi.latitude - d_lat, hi.longitude - d_lon)
            else:
                fetch = BoundingBox.from_bounds(
                    max(region.min_lat, lo.latitude - d_lat), max(region.min_lon, lo.longitude - d_lon),
                    min(region.max_lat, hi.latitude + d_lat), min(region.max_lon, hi.longitude + d_lon))
            segments.append(Segment((r, c), bounds, fetch))
    return GridPlan(region, rows, cols, float(margin_fraction), tuple(segments), margin_mode)


def _max_normalize(counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts, dtype=float)
    peak = counts.max()
    if peak <= 0:
        return np.zeros_like(counts)
    return counts / peak


def update_weights(plan: GridPlan, density: DensityMatrix, query_density: DensityMatrix | None = None,
                   alpha: float = 1.0, beta: float = 1.0) -> GridPlan:
    """Reweight segments from observed thing density and (optionally) query density.

    weight = alpha * density/max(density) + beta * queries/max(queries).
    ``empty_rounds`` counts consecutive rounds with zero observed things.
    """
    if density.shape != (plan.rows, plan.cols):
        raise DimensionMismatch(f"density is {density.shape}, plan is {(plan.rows, plan.cols)}")
    if query_density is not None and query_density.shape != (plan.rows, plan.cols):
        raise DimensionMismatch(f"query density is {query_density.shape}, plan is {(plan.rows, plan.cols)}")
    if alpha < 0 or beta < 0 or alpha + beta <= 0:
        raise ValueError("alpha and beta must be >= 0 with a positive sum")

    weights = alpha * _max_normalize(density.counts)
    if query_density is not None:
        weights = weights + beta * _max_normalize(query_density.counts)
    segments = []
    for s in plan.segments:
        r, c = s.index
        empty = s.empty_rounds + 1 if density.counts[r, c] == 0 else 0
        segments.append(replace(s, weight=float(weights[r, c]), empty_rounds=empty))
    return replace(plan, segments=tuple(segments))


def _is_pruned(s: Segment, prune_threshold: float, revisit_every: int) -> bool:
    if s.empty_rounds <= 0 or s.weight > prune_threshold:
        return False
    return s.empty_rounds % revisit_every != 0


def build_queue(plan: GridPlan, prune_threshold: float = 0.0, revisit_every: int = 10,
                max_multiplicity: int | None = None) -> ScanQueue:
    """Expand segment weights into an ordered scan queue.

    A segment is pruned when it has had at least one empty round and its weight
    is at or below ``prune_threshold``; it is forced back every
    ``revisit_every`` empty rounds. Kept segments repeat
    ``max(1, round(w / w_min))`` times, ``w_min`` being the smallest positive
    kept weight, capped at ``max_multiplicity`` (and never above
    ``MULTIPLICITY_CEILING``). Order is descending weight, then row-major.
    """
    if revisit_every < 1:
        raise ValueError("revisit_every must be >= 1")
    if max_multiplicity is not None and max_multiplicity < 1:
        raise ValueError("max_multiplicity must be >= 1")
    kept = [s for s in plan.segments if not _is_pruned(s, prune_threshold, revisit_every)]
    positive = [s.weight for s in kept if s.weight > 0]
    w_min = min(positive) if positive else None
    ordered = sorted(kept, key=lambda s: (-s.weight, s.index))
    entries: list[tuple[int, int]] = []
    for s in ordered:
        n = 1
        if w_min is not None and s.weight > 0:
            # clamp before flooring: a subnormal w_min makes the ratio infinite
            n = max(1, math.floor(min(s.weight / w_min + 0.5, MULTIPLICITY_CEILING)))
        if max_multiplicity is not None:
            n = min(n, max_multiplicity)
        entries.extend([s.index] * n)
    return ScanQueue(tuple(entries))

"""Per-cell record counts over a rectangular grid."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Iterable

import numpy as np

from ..geo import BoundingBox, Snapshot, ThingRecord

__all__ = ["DensityMatrix", "density", "cell_indices", "density_from_points", "write_csv", "read_csv", "write_pgm"]


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Grid of nonnegative integer counts; row 0 is the southernmost band."""

    region: BoundingBox
    counts: np.ndarray
    timestamp: datetime | None = None

    def __post_init__(self) -> None:
        counts = np.array(self.counts, dtype=np.int64, copy=True)
        if counts.ndim != 2 or counts.shape[0] < 1 or counts.shape[1] < 1:
            raise ValueError(f"counts must be a non-empty 2-d array, got shape {counts.shape}")
        if (counts < 0).any():
            raise ValueError("counts must be nonnegative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def rows(self) -> int:
        return int(self.counts.shape[0])

    @property
    def cols(self) -> int:
        return int(self.counts.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DensityMatrix):
            return NotImplemented
        return self.region == other.region and np.array_equal(self.counts, other.counts)

    def __hash__(self) -> int:
        return hash((self.region, self.counts.tobytes()))

    def to_csv(self) -> str:
        return "".join(",".join(str(int(v)) for v in row) + "\n" for row in self.counts)

    def to_pgm(self) -> bytes:
        peak = int(self.counts.max())
        if peak == 0:
            pixels = np.zeros(self.shape, dtype=np.uint8)
        else:
            # round half up; np.round would round half to even
            pixels = np.floor(255.0 * self.counts / peak + 0.5).astype(np.uint8)
        header = f"P5\n{self.cols} {self.rows}\n255\n".encode("ascii")
        return header + pixels.tobytes()


def grid_edges(lo: float, hi: float, n: int) -> np.ndarray:
    """Cell edges shared by the grid planner and every density computation."""
    step = (hi - lo) / n
    edges = np.array([lo + i * step for i in range(n)] + [hi], dtype=np.float64)
    return edges


def cell_indices(region: BoundingBox, rows: int, cols: int, lat, lon):
    """Map coordinates to (row, col) cell indices.

    Cells are half-open except that the region's max edges are closed.
    Points outside the region get index -1 in both outputs.
    """
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    inside = (
        (lat >= region.min_lat) & (lat <= region.max_lat)
        & (lon >= region.min_lon) & (lon <= region.max_lon)
    )
    r = np.searchsorted(grid_edges(region.min_lat, region.max_lat, rows), lat, side="right") - 1
    c = np.searchsorted(grid_edges(region.min_lon, region.max_lon, cols), lon, side="right") - 1
    r = np.clip(r, 0, rows - 1)
    c = np.clip(c, 0, cols - 1)
    return np.where(inside, r, -1), np.where(inside, c, -1)


def density_from_points(region: BoundingBox, rows: int, cols: int, lat, lon,
                        timestamp: datetime | None = None) -> DensityMatrix:
    if rows < 1 or cols < 1:
        raise ValueError("grid dimensions must be >= 1")
    r, c = cell_indices(region, rows, cols, lat, lon)
    keep = r >= 0
    counts = np.zeros((rows, cols), dtype=np.int64)
    np.add.at(counts, (r[keep], c[keep]), 1)
    return DensityMatrix(region, counts, timestamp)


def density(snapshot: Snapshot | Iterable[ThingRecord], region: BoundingBox, rows: int, cols: int) -> DensityMatrix:
    if isinstance(snapshot, Snapshot):
        records, ts = list(snapshot.records), snapshot.round_timestamp
    else:
        records, ts = list(snapshot), None
    lat = [r.lat for r in records]
    lon = [r.lon for r in records]
    return density_from_points(region, rows, cols, lat, lon, ts)


def write_csv(m: DensityMatrix, path: str | Path) -> None:
    Path(path).write_text(m.to_csv(), encoding="utf-8")


def write_pgm(m: DensityMatrix, path: str | Path) -> None:
    Path(path).write_bytes(m.to_pgm())


def read_csv(path: str | Path, region: BoundingBox | None = None) -> DensityMatrix:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            rows.append([int(float(x)) for x in line.split(",")])
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: not a rectangular count matrix")
    if region is None:
        region = BoundingBox.from_bounds(-90, -180, 90, 180)
    return DensityMatrix(region, np.array(rows, dtype=np.int64))

"""Core value types: points, boxes, thing records, snapshots and query-log entries.

Everything here is immutable so values can be handed between worker threads
without copying. Serialization follows the JSON-lines layout used by the store
and the CLI::

    {"round_timestamp": "2015-08-25T00:00:00Z"}
    {"source_id": "s1", "object_id": "a", "lat": 1.0, "lon": 2.0,
     "observed_at": "2015-08-25T00:00:00Z", "attributes": {}}
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from .errors import InvalidRegion

__all__ = [
    "GeoPoint",
    "BoundingBox",
    "ThingRecord",
    "Snapshot",
    "QueryLogEntry",
    "validate_point",
    "box_contains",
    "clamp_point",
    "parse_timestamp",
    "format_timestamp",
    "record_to_json",
    "record_from_json",
    "write_snapshot_file",
    "read_snapshot_file",
]


# timestamps


def to_utc(value: datetime) -> datetime:
    """Return ``value`` as an aware UTC datetime truncated to whole seconds."""
    if value.tzinfo is None:
        value = value.replace(tzinfo=timezone.utc)
    return value.astimezone(timezone.utc).replace(microsecond=0)


def parse_timestamp(value: Any) -> datetime:
    """Parse ISO-8601 text, epoch seconds or a datetime into UTC seconds."""
    if isinstance(value, datetime):
        return to_utc(value)
    if isinstance(value, bool):
        raise ValueError(f"not a timestamp: {value!r}")
    if isinstance(value, (int, float)):
        if not math.isfinite(value):
            raise ValueError(f"not a timestamp: {value!r}")
        return datetime.fromtimestamp(int(value), tz=timezone.utc)
    if isinstance(value, str):
        return _parse_iso(value)
    raise ValueError(f"not a timestamp: {value!r}")


@lru_cache(maxsize=4096)
def _parse_iso(value: str) -> datetime:
    # feeds repeat the same few timestamps many times over, hence the cache
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    # fromisoformat on 3.10 rejects fractions that are not 3 or 6 digits
    if "." in text:
        head, _, tail = text.partition(".")
        n = 0
        while n < len(tail) and tail[n].isdigit():
            n += 1
        text = head + tail[n:]
    return to_utc(datetime.fromisoformat(text))


def format_timestamp(value: datetime) -> str:
    return to_utc(value).strftime("%Y-%m-%dT%H:%M:%SZ")


# geometry


@dataclass(frozen=True)
class GeoPoint:
    """A WGS84-style latitude/longitude pair in degrees.

    Construction does not validate; use :func:`validate_point` (the refiner
    relies on being able to hold out-of-range points long enough to drop them).
    """

    latitude: float
    longitude: float


def validate_point(p: GeoPoint) -> bool:
    lat, lon = p.latitude, p.longitude
    if not (isinstance(lat, (int, float)) and isinstance(lon, (int, float))):
        return False
    return -90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0


def clamp_point(p: GeoPoint) -> GeoPoint:
    return GeoPoint(min(90.0, max(-90.0, p.latitude)), min(180.0, max(-180.0, p.longitude)))


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned lat/lon rectangle, closed on all edges.

    Boxes that would wrap the antimeridian (min longitude east of max) are
    rejected. Zero-area boxes are only allowed with ``point=True``.
    """

    min_corner: GeoPoint
    max_corner: GeoPoint
    point: bool = field(default=False, compare=False)

    def __post_init__(self) -> None:
        lo, hi = self.min_corner, self.max_corner
        if not (validate_point(lo) and validate_point(hi)):
            raise InvalidRegion(f"corner out of range: {lo}, {hi}")
        if lo.latitude > hi.latitude:
            raise InvalidRegion(f"min latitude {lo.latitude} above max {hi.latitude}")
        if lo.longitude > hi.longitude:
            raise InvalidRegion("box crosses the antimeridian or is inverted")
        if not self.point and (lo.latitude == hi.latitude or lo.longitude == hi.longitude):
            raise InvalidRegion("degenerate box has zero area")

    @classmethod
    def from_bounds(cls, min_lat: float, min_lon: float, max_lat: float, max_lon: float) -> "BoundingBox":
        return cls(GeoPoint(float(min_lat), float(min_lon)), GeoPoint(float(max_lat), float(max_lon)))

    @property
    def min_lat(self) -> float:
        return self.min_corner.latitude

    @property
    def min_lon(self) -> float:
        return self.min_corner.longitude

    @property
    def max_lat(self) -> float:
        return self.max_corner.latitude

    @property
    def max_lon(self) -> float:
        return self.max_corner.longitude

    @property
    def height(self) -> float:
        return self.max_lat - self.min_lat

    @property
    def width(self) -> float:
        return self.max_lon - self.min_lon

    def contains(self, p: GeoPoint) -> bool:
        return box_contains(self, p)

    def expand(self, d_lat: float, d_lon: float) -> "BoundingBox":
        """Grow by the given amounts on every side, clipped to valid ranges."""
        return BoundingBox.from_bounds(
            max(-90.0, self.min_lat - d_lat),
            max(-180.0, self.min_lon - d_lon),
            min(90.0, self.max_lat + d_lat),
            min(180.0, self.max_lon + d_lon),
        )

    def as_list(self) -> list[float]:
        return [self.min_lat, self.min_lon, self.max_lat, self.max_lon]

    def to_json(self) -> dict:
        return {"min_lat": self.min_lat, "min_lon": self.min_lon, "max_lat": self.max_lat, "max_lon": self.max_lon}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "BoundingBox":
        return cls.from_bounds(obj["min_lat"], obj["min_lon"], obj["max_lat"], obj["max_lon"])

    @classmethod
    def parse(cls, text: str) -> "BoundingBox":
        """Parse ``"min_lat,min_lon,max_lat,max_lon"``."""
        parts = [float(x) for x in text.split(",")]
        if len(parts) != 4:
            raise InvalidRegion(f"expected 4 comma-separated numbers, got {text!r}")
        return cls.from_bounds(*parts)


def box_contains(b: BoundingBox, p: GeoPoint) -> bool:
    return (
        b.min_lat <= p.latitude <= b.max_lat
        and b.min_lon <= p.longitude <= b.max_lon
    )


# records


Scalar = Any  # str | int | float | bool | None


def freeze_attributes(attrs: Mapping[str, Scalar] | Iterable[tuple[str, Scalar]] | None) -> tuple:
    if attrs is None:
        return ()
    items = attrs.items() if isinstance(attrs, Mapping) else attrs
    out = []
    for k, v in items:
        if isinstance(v, (list, dict)):
            # nested payload values are kept as canonical JSON text
            v = json.dumps(v, sort_keys=True, separators=(",", ":"))
        out.append((str(k), v))
    return tuple(out)


@dataclass(frozen=True)
class ThingRecord:
    source_id: str
    object_id: str
    position: GeoPoint
    observed_at: datetime
    attributes: tuple = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "observed_at", to_utc(self.observed_at))
        if not isinstance(self.attributes, tuple):
            object.__setattr__(self, "attributes", freeze_attributes(self.attributes))

    @classmethod
    def create(cls, source_id: str, object_id: str, lat: float, lon: float,
               observed_at: datetime | str, attributes: Mapping[str, Scalar] | None = None) -> "ThingRecord":
        return cls(str(source_id), str(object_id), GeoPoint(float(lat), float(lon)),
                   parse_timestamp(observed_at), freeze_attributes(attributes))

    @property
    def lat(self) -> float:
        return self.position.latitude

    @property
    def lon(self) -> float:
        return self.position.longitude

    @property
    def attrs(self) -> dict[str, Scalar]:
        return dict(self.attributes)

    @property
    def key(self) -> tuple[str, str, datetime]:
        return (self.source_id, self.object_id, self.observed_at)

    def with_attributes(self, attrs: Mapping[str, Scalar]) -> "ThingRecord":
        return ThingRecord(self.source_id, self.object_id, self.position, self.observed_at,
                           freeze_attributes(attrs))


def record_to_json(r: ThingRecord) -> dict:
    return {
        "source_id": r.source_id,
        "object_id": r.object_id,
        "lat": r.lat,
        "lon": r.lon,
        "observed_at": format_timestamp(r.observed_at),
        "attributes": dict(r.attributes),
    }


def record_from_json(obj: Mapping[str, Any]) -> ThingRecord:
    return ThingRecord.create(obj["source_id"], obj["object_id"], obj["lat"], obj["lon"],
                              obj["observed_at"], obj.get("attributes") or {})


def dumps_record(r: ThingRecord) -> str:
    return json.dumps(record_to_json(r), ensure_ascii=False, separators=(",", ":"))


@dataclass(frozen=True)
class Snapshot:
    """All records captured in one crawl round."""

    round_timestamp: datetime
    records: frozenset = frozenset()
    source_ids: frozenset = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "round_timestamp", to_utc(self.round_timestamp))
        records = frozenset(self.records)
        sources = frozenset(self.source_ids) | {r.source_id for r in records}
        keys = {r.key for r in records}
        if len(keys) != len(records):
            raise ValueError("snapshot holds two records with the same (source_id, object_id, observed_at)")
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "source_ids", sources)

    def __len__(self) -> int:
        return len(self.records)

    def for_source(self, source_id: str) -> list[ThingRecord]:
        return sorted((r for r in self.records if r.source_id == source_id), key=_record_sort_key)

    def sorted_records(self) -> list[ThingRecord]:
        return sorted(self.records, key=_record_sort_key)


def _record_sort_key(r: ThingRecord):
    return (r.source_id, r.object_id, r.observed_at)


def write_snapshot_file(snapshot: Snapshot, path: str | Path) -> None:
    """Single-file snapshot: header line then one record per line."""
    header = {"round_timestamp": format_timestamp(snapshot.round_timestamp),
              "source_ids": sorted(snapshot.source_ids)}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for r in snapshot.sorted_records():
            fh.write(dumps_record(r) + "\n")


def read_snapshot_file(path: str | Path) -> Snapshot:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty snapshot file")
    header = json.loads(lines[0])
    records = [record_from_json(json.loads(ln)) for ln in lines[1:]]
    return Snapshot(parse_timestamp(header["round_timestamp"]), frozenset(records),
                    frozenset(header.get("source_ids", ())))


def iter_records(lines: Iterable[str]) -> Iterator[ThingRecord]:
    for ln in lines:
        if ln.strip():
            yield record_from_json(json.loads(ln))


# query log


@dataclass(frozen=True)
class QueryLogEntry:
    timestamp: datetime
    lat: float | None
    lng: float | None
    zoom: int | None
    what: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "timestamp", to_utc(self.timestamp))
        object.__setattr__(self, "what", (self.what or "").strip().lower())

    @property
    def has_position(self) -> bool:
        return self.lat is not None and self.lng is not None

"""Search query log ingestion and keyword statistics."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping

from ..errors import BadCategoryMap
from ..geo import BoundingBox, GeoPoint, QueryLogEntry, parse_timestamp, validate_point
from .density import DensityMatrix, density_from_points

__all__ = [
    "CATEGORIES",
    "KeywordRow",
    "KeywordStats",
    "parse_query_log",
    "load_category_map",
    "keyword_stats",
    "per_day_counts",
    "query_density",
]

CATEGORIES = ("Energy", "Home", "Health", "Environment", "Flora and Fauna", "Transport", "Experiment",
              "Miscellaneous")
_ALIASES = {c.lower(): c for c in CATEGORIES} | {"misc": "Miscellaneous", "misc.": "Miscellaneous"}
OTHER_KEYWORDS = "other keywords"


def _num(value) -> float | None:
    if value is None or value == "":
        return None
    if isinstance(value, bool):
        raise ValueError("boolean is not a number")
    return float(value)


def _parse_line(line: str) -> QueryLogEntry:
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise ValueError("query line is not an object")
    q = obj.get("query", obj)
    if not isinstance(q, dict):
        raise ValueError("query field is not an object")
    ts = parse_timestamp(obj["timestamp"])
    lat, lng = _num(q.get("lat")), _num(q.get("lng"))
    if (lat is None) != (lng is None):
        raise ValueError("lat and lng must both be present or both absent")
    if lat is not None and not validate_point(GeoPoint(lat, lng)):
        raise ValueError("coordinates out of range")
    zoom_raw = _num(q.get("zoom"))
    zoom = None
    if zoom_raw is not None:
        if zoom_raw < 0 or zoom_raw != int(zoom_raw):
            raise ValueError("zoom must be a nonnegative integer")
        zoom = int(zoom_raw)
    what = q.get("what")
    if what is not None and not isinstance(what, str):
        what = str(what)
    return QueryLogEntry(ts, lat, lng, zoom, what or "")


def parse_query_log(lines: Iterable[str]) -> tuple[list[QueryLogEntry], int]:
    """Parse JSON-lines query records; malformed lines are skipped and counted."""
    entries: list[QueryLogEntry] = []
    rejected = 0
    for line in lines:
        if not line.strip():
            continue
        try:
            entries.append(_parse_line(line))
        except (ValueError, KeyError, TypeError, OverflowError):
            rejected += 1
    return entries, rejected


def load_category_map(source: str | Path | Mapping[str, str] | Iterable[str]) -> dict[str, str]:
    """Read ``keyword<TAB>category`` lines into a keyword -> canonical category map."""
    if isinstance(source, Mapping):
        items = list(source.items())
    else:
        if isinstance(source, (str, Path)):
            lines = Path(source).read_text(encoding="utf-8").splitlines()
        else:
            lines = list(source)
        items = []
        for n, line in enumerate(lines, 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise BadCategoryMap(f"line {n}: expected keyword<TAB>category")
            items.append((parts[0], parts[1]))
    out: dict[str, str] = {}
    for kw, cat in items:
        canonical = _ALIASES.get(cat.strip().lower())
        if canonical is None:
            raise BadCategoryMap(f"unknown category {cat!r} for keyword {kw!r}")
        out[kw.strip().lower()] = canonical
    return out


@dataclass(frozen=True)
class KeywordRow:
    keyword: str
    frequency: int
    category: str
    percent: float


@dataclass(frozen=True)
class KeywordStats:
    rows: tuple[KeywordRow, ...]
    total_queries: int
    keyworded: int
    keyworded_fraction: float
    category_totals: Mapping[str, int] = field(default_factory=dict)
    per_day: Mapping[date, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "rows": [
                {"keyword": r.keyword, "frequency": r.frequency, "category": r.category, "percent": r.percent}
                for r in self.rows
            ],
            "total_queries": self.total_queries,
            "keyworded": self.keyworded,
            "keyworded_fraction": self.keyworded_fraction,
            "category_totals": dict(self.category_totals),
            "per_day": {d.isoformat(): n for d, n in sorted(self.per_day.items())},
        }

    def to_csv(self) -> str:
        lines = ["keyword,frequency,category,percent"]
        for r in self.rows:
            lines.append(f"{r.keyword},{r.frequency},{r.category},{r.percent:.1f}")
        return "\n".join(lines) + "\n"


def per_day_counts(entries: Iterable[QueryLogEntry]) -> dict[date, int]:
    return dict(sorted(Counter(e.timestamp.date() for e in entries).items()))


def query_density(entries: Iterable[QueryLogEntry], region: BoundingBox, rows: int, cols: int) -> DensityMatrix:
    pts = [(e.lat, e.lng) for e in entries if e.has_position]
    lat = [p[0] for p in pts]
    lng = [p[1] for p in pts]
    return density_from_points(region, rows, cols, lat, lng)


def keyword_stats(entries: Iterable[QueryLogEntry], category_map, top_n: int | None = None) -> KeywordStats:
    """Keyword frequency table, in descending frequency with ties alphabetical.

    Percentages are of the keyworded queries. With ``top_n`` the tail is
    folded into a single "other keywords" row. Keywords missing from the
    category map count as Miscellaneous.
    """
    cats = category_map if isinstance(category_map, dict) else load_category_map(category_map)
    entries = list(entries)
    freq = Counter(e.what for e in entries if e.what)
    keyworded = sum(freq.values())
    ranked = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))
    totals: Counter[str] = Counter()
    for kw, n in ranked:
        totals[cats.get(kw, "Miscellaneous")] += n

    def pct(n: int) -> float:
        return 100.0 * n / keyworded if keyworded else 0.0

    shown = ranked if top_n is None else ranked[:top_n]
    rows = [KeywordRow(kw, n, cats.get(kw, "Miscellaneous"), pct(n)) for kw, n in shown]
    rest = sum(n for _, n in ranked[len(shown):])
    if rest:
        rows.append(KeywordRow(OTHER_KEYWORDS, rest, "-", pct(rest)))
    return KeywordStats(
        rows=tuple(rows),
        total_queries=len(entries),
        keyworded=keyworded,
        keyworded_fraction=keyworded / len(entries) if entries else 0.0,
        category_totals=dict(totals),
        per_day=per_day_counts(entries),
    )

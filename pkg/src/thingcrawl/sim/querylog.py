"""Synthetic query logs that replay a reference keyword frequency table."""

from __future__ import annotations

import json
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterator

import numpy as np

from .world import rng_for

# (keyword, frequency, category) for the 24 most popular keywords
KEYWORD_TABLE: tuple[tuple[str, int, str], ...] = (
    ("air quality", 71700, "Environment"),
    ("sensor", 3348, "Miscellaneous"),
    ("ship", 1851, "Transport"),
    ("radiation", 1825, "Environment"),
    ("earthquake", 1601, "Environment"),
    ("gamma", 1131, "Environment"),
    ("weather", 876, "Environment"),
    ("shark", 851, "Flora and Fauna"),
    ("temperature", 581, "Environment"),
    ("camera", 397, "Home"),
    ("car", 392, "Transport"),
    ("iphone", 271, "Home"),
    ("fridge", 259, "Home"),
    ("webcam", 255, "Home"),
    ("aircraft", 247, "Transport"),
    ("sharks", 245, "Flora and Fauna"),
    ("energy", 242, "Energy"),
    ("food", 239, "Home"),
    ("netatmo", 216, "Environment"),
    ("coffee", 177, "Home"),
    ("traffic", 168, "Transport"),
    ("transport", 166, "Transport"),
    ("cars", 163, "Transport"),
    ("raspberry pi", 159, "Experiment"),
)
OTHER_KEYWORD_TOTAL = 28771
KEYWORDED_TOTAL = 116131
LOG_START = datetime(2014, 12, 2, tzinfo=timezone.utc)
LOG_END = datetime(2015, 1, 27, 23, 59, 59, tzinfo=timezone.utc)


def _tail_keywords(total: int, cap: int) -> list[tuple[str, int]]:
    """Split ``total`` queries over distinct filler keywords, each below ``cap``."""
    per = cap - 16
    n = -(-total // per)
    base, extra = divmod(total, n)
    return [(f"kw{i:04d}", base + (1 if i < extra else 0)) for i in range(n)]


def category_map_lines() -> list[str]:
    return [f"{kw}\t{cat}" for kw, _, cat in KEYWORD_TABLE]


def write_category_map(path: str | Path) -> None:
    Path(path).write_text("\n".join(category_map_lines()) + "\n", encoding="utf-8")


def replay_queries(keyworded_fraction: float = 0.849, seed: int = 0, scale: int = 1,
                   region=None) -> Iterator[dict]:
    """Yield query-log records whose keyword counts match the table.

    ``scale`` divides every frequency (rounding half up) to make smaller logs.
    Queries without a keyword are added so that the keyworded share equals
    ``keyworded_fraction`` as closely as an integer count allows.
    """
    if not 0.0 < keyworded_fraction <= 1.0:
        raise ValueError("keyworded_fraction must lie in (0, 1]")
    counts = [(kw, n) for kw, n, _ in KEYWORD_TABLE]
    counts += _tail_keywords(OTHER_KEYWORD_TOTAL, KEYWORD_TABLE[-1][1])
    if scale > 1:
        counts = [(kw, max(1, int(n / scale + 0.5))) for kw, n in counts]
    keyworded = sum(n for _, n in counts)
    total = int(keyworded / keyworded_fraction + 0.5)
    blanks = total - keyworded
    whats = [kw for kw, n in counts for _ in range(n)] + [""] * blanks
    rng = rng_for(seed, "querylog")
    order = rng.permutation(len(whats))
    span = (LOG_END - LOG_START).total_seconds()
    offsets = np.sort(rng.uniform(0.0, span, len(whats)))
    if region is None:
        lat = rng.uniform(-60.0, 70.0, len(whats))
        lng = rng.uniform(-180.0, 180.0, len(whats))
    else:
        lat = rng.uniform(region.min_lat, region.max_lat, len(whats))
        lng = rng.uniform(region.min_lon, region.max_lon, len(whats))
    zoom = rng.integers(1, 18, len(whats))
    for k, idx in enumerate(order):
        ts = LOG_START + timedelta(seconds=int(offsets[k]))
        q = {"lat": f"{lat[k]:.2f}", "lng": f"{lng[k]:.2f}", "zoom": str(int(zoom[k]))}
        if whats[idx]:
            q["what"] = whats[idx]
        yield {"timestamp": ts.strftime("%Y-%m-%dT%H:%M:%S+00:00"), "query": q}


def write_replay_log(path: str | Path, keyworded_fraction: float = 0.849, seed: int = 0, scale: int = 1) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in replay_queries(keyworded_fraction, seed, scale):
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
            n += 1
    return n

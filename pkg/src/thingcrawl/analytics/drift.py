"""Drift of the spatial distribution across stored rounds."""

from __future__ import annotations

from datetime import datetime

from ..geo import BoundingBox, to_utc
from .density import density
from .emd import DriftScore, emd


def drift_series(store, t_1: datetime, region: BoundingBox, rows: int, cols: int) -> list[DriftScore]:
    """EMD of every stored round from ``t_1`` onward against the ``t_1`` distribution."""
    t_1 = to_utc(t_1)
    base = density(store.get_snapshot(t_1), region, rows, cols)
    out = []
    for t in store.list_rounds():
        if t < t_1:
            continue
        d_i = base if t == t_1 else density(store.get_snapshot(t), region, rows, cols)
        out.append(emd(base, d_i))
    return out

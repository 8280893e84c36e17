"""Row-level update ratio between two snapshots."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime

from ..errors import OrderViolation
from ..geo import Snapshot, format_timestamp

__all__ = ["UpdateRatioReport", "update_ratio", "new_rows"]


@dataclass(frozen=True)
class UpdateRatioReport:
    ratio: float
    i_timestamp: datetime
    j_timestamp: datetime
    new_rows: int

    def to_json(self) -> dict:
        return {
            "ratio": self.ratio,
            "i_timestamp": format_timestamp(self.i_timestamp),
            "j_timestamp": format_timestamp(self.j_timestamp),
            "new_rows": self.new_rows,
        }


def new_rows(d_i: Snapshot, d_j: Snapshot) -> frozenset:
    """Rows of ``d_j`` absent from ``d_i``; a row is the full record tuple."""
    return d_j.records - d_i.records


def update_ratio(d_i: Snapshot, d_j: Snapshot) -> UpdateRatioReport:
    """``|new rows of d_j| / max(|d_i|, |d_j|)``, zero when both are empty."""
    if d_j.round_timestamp <= d_i.round_timestamp:
        raise OrderViolation("the later snapshot must have a strictly later round timestamp")
    diff = len(new_rows(d_i, d_j))
    denom = max(len(d_i), len(d_j))
    ratio = diff / denom if denom else 0.0
    return UpdateRatioReport(ratio, d_i.round_timestamp, d_j.round_timestamp, diff)

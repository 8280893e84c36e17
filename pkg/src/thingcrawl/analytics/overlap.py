"""Inclusiveness of overlapping sources."""

from __future__ import annotations

from typing import Iterable, Mapping

from ..geo import Snapshot, ThingRecord

__all__ = ["inclusiveness", "id_sets"]


def inclusiveness(id_sets: Mapping[str, Iterable[str]]) -> dict[str, float]:
    """Share of the union of object ids held by each source."""
    sets = {sid: set(ids) for sid, ids in id_sets.items()}
    union: set[str] = set().union(*sets.values()) if sets else set()
    if not union:
        return {sid: 0.0 for sid in sets}
    return {sid: len(ids) / len(union) for sid, ids in sets.items()}


def id_sets(records: Snapshot | Iterable[ThingRecord]) -> dict[str, set[str]]:
    out: dict[str, set[str]] = {}
    if isinstance(records, Snapshot):
        for sid in records.source_ids:
            out.setdefault(sid, set())
        records = records.records
    for r in records:
        out.setdefault(r.source_id, set()).add(r.object_id)
    return out

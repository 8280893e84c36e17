"""Append-only, file-based snapshot store.

Layout under the root directory::

    manifest.jsonl                      one line per round, strictly increasing
    rounds/<YYYYmmddTHHMMSSZ>/<source_id>.jsonl

Round files are written to a temporary name and renamed into place, so
readers only ever see complete files. The manifest is appended with a single
``os.write`` on an ``O_APPEND`` descriptor.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
from datetime import datetime
from pathlib import Path
from typing import Iterator

from .analytics.density import DensityMatrix, density
from .errors import IoFailure, OutOfOrderRound, UnknownRound
from .geo import (
    BoundingBox,
    Snapshot,
    ThingRecord,
    dumps_record,
    format_timestamp,
    iter_records,
    parse_timestamp,
    to_utc,
)

__all__ = ["SnapshotStore", "round_dirname"]


def round_dirname(t: datetime) -> str:
    return to_utc(t).strftime("%Y%m%dT%H%M%SZ")


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(prefix="." + path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


class SnapshotStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.manifest_path = self.root / "manifest.jsonl"
        self._lock = threading.Lock()
        # directories are created by the first put, so read-only use leaves no trace

    # manifest

    def manifest(self) -> list[dict]:
        if not self.manifest_path.exists():
            return []
        out = []
        with open(self.manifest_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    out.append(json.loads(line))
        return out

    def list_rounds(self) -> list[datetime]:
        return [parse_timestamp(m["round_timestamp"]) for m in self.manifest()]

    def _entry(self, t: datetime) -> dict:
        key = format_timestamp(t)
        for m in self.manifest():
            if m["round_timestamp"] == key:
                return m
        raise UnknownRound(key)

    # write path

    def put_snapshot(self, s: Snapshot) -> dict:
        with self._lock:
            rounds = self.list_rounds()
            if rounds and s.round_timestamp <= rounds[-1]:
                raise OutOfOrderRound(
                    f"round {format_timestamp(s.round_timestamp)} is not after {format_timestamp(rounds[-1])}")
            rdir = self.root / "rounds" / round_dirname(s.round_timestamp)
            counts: dict[str, int] = {}
            sizes: dict[str, int] = {}
            try:
                rdir.mkdir(parents=True, exist_ok=True)
                for sid in sorted(s.source_ids):
                    recs = s.for_source(sid)
                    counts[sid] = len(recs)
                    if not recs:
                        sizes[sid] = 0
                        continue
                    data = "".join(dumps_record(r) + "\n" for r in recs).encode("utf-8")
                    _atomic_write(rdir / f"{sid}.jsonl", data)
                    sizes[sid] = len(data)
                entry = {
                    "round_timestamp": format_timestamp(s.round_timestamp),
                    "dir": str(Path("rounds") / rdir.name),
                    "source_ids": sorted(s.source_ids),
                    "counts": counts,
                    "bytes": sizes,
                    "total_records": sum(counts.values()),
                    "total_bytes": sum(sizes.values()),
                }
                line = (json.dumps(entry, separators=(",", ":")) + "\n").encode("utf-8")
                fd = os.open(self.manifest_path, os.O_WRONLY | os.O_CREAT | os.O_APPEND, 0o644)
                try:
                    os.write(fd, line)
                    os.fsync(fd)
                finally:
                    os.close(fd)
            except OSError as exc:
                raise IoFailure(f"writing round {format_timestamp(s.round_timestamp)}: {exc}") from exc
            return entry

    # read path

    def _round_files(self, entry: dict) -> Iterator[tuple[str, Path]]:
        rdir = self.root / entry["dir"]
        for sid in entry.get("source_ids", ()):
            if entry["counts"].get(sid):
                yield sid, rdir / f"{sid}.jsonl"

    def get_snapshot(self, t: datetime) -> Snapshot:
        entry = self._entry(t)
        records: list[ThingRecord] = []
        for _, path in self._round_files(entry):
            with open(path, encoding="utf-8") as fh:
                records.extend(iter_records(fh))
        return Snapshot(parse_timestamp(entry["round_timestamp"]), frozenset(records),
                        frozenset(entry.get("source_ids", ())))

    def iter_snapshots(self) -> Iterator[Snapshot]:
        for t in self.list_rounds():
            yield self.get_snapshot(t)

    def latest_per_object(self, source_id: str) -> dict[str, ThingRecord]:
        latest: dict[str, ThingRecord] = {}
        for entry in self.manifest():
            if not entry["counts"].get(source_id):
                continue
            path = self.root / entry["dir"] / f"{source_id}.jsonl"
            with open(path, encoding="utf-8") as fh:
                for r in iter_records(fh):
                    prev = latest.get(r.object_id)
                    if prev is None or r.observed_at > prev.observed_at:
                        latest[r.object_id] = r
        return latest

    # exports

    def density(self, t: datetime, region: BoundingBox, rows: int, cols: int) -> DensityMatrix:
        return density(self.get_snapshot(t), region, rows, cols)

    def export_density(self, t: datetime, region: BoundingBox, rows: int, cols: int,
                       csv_path: str | Path | None = None, pgm_path: str | Path | None = None) -> DensityMatrix:
        m = self.density(t, region, rows, cols)
        try:
            if csv_path is not None:
                _atomic_write(Path(csv_path), m.to_csv().encode("ascii"))
            if pgm_path is not None:
                _atomic_write(Path(pgm_path), m.to_pgm())
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        return m


"""Round orchestration: scan queue -> concurrent fetches -> refine -> merge -> enrich -> snapshot."""

from __future__ import annotations

import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Callable, Mapping

from .analytics.density import DensityMatrix, density
from .clock import Clock
from .errors import (
    AllSourcesFailed,
    DepthExceeded,
    SourceError,
    SourceFailureWarning,
    UnknownEnricher,
)
from .geo import Snapshot, ThingRecord, format_timestamp, to_utc
from .grid import GridPlan, ScanQueue, SchedConfig, build_queue, update_weights
from .source import SourceAdapter, SourceDescriptor, Transport, refine
from .store import SnapshotStore

log = logging.getLogger(__name__)

__all__ = [
    "RoundConfig",
    "Enricher",
    "NoopEnricher",
    "TableEnricher",
    "register_enricher",
    "lookup_enricher",
    "run_round",
    "run_campaign",
    "RoundSummary",
]


# enrichers


class Enricher:
    """Fills absent fields of a record. Must never drop or overwrite populated ones."""

    name = "base"

    def enrich(self, record: ThingRecord) -> ThingRecord:
        raise NotImplementedError


class NoopEnricher(Enricher):
    name = "noop"

    def enrich(self, record: ThingRecord) -> ThingRecord:
        return record


class TableEnricher(Enricher):
    """Fills missing attributes from a JSON-lines sidecar keyed by (source_id, object_id).

    Each sidecar line is ``{"source_id": .., "object_id": .., <field>: <value>, ...}``.
    """

    name = "table"

    def __init__(self, path: str | Path | None = None, rows: Mapping[tuple[str, str], Mapping[str, Any]] | None = None):
        self.table: dict[tuple[str, str], dict[str, Any]] = {}
        if rows:
            self.table.update({k: dict(v) for k, v in rows.items()})
        if path is not None:
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    obj = json.loads(line)
                    key = (str(obj.pop("source_id")), str(obj.pop("object_id")))
                    self.table.setdefault(key, {}).update(obj)

    def enrich(self, record: ThingRecord) -> ThingRecord:
        extra = self.table.get((record.source_id, record.object_id))
        if not extra:
            return record
        attrs = record.attrs
        changed = False
        for k, v in extra.items():
            if attrs.get(k) is None:
                attrs[k] = v
                changed = True
        return record.with_attributes(attrs) if changed else record


_REGISTRY: dict[str, Callable[..., Enricher]] = {}


def register_enricher(name: str, factory: Callable[..., Enricher]) -> None:
    _REGISTRY[name] = factory


register_enricher("noop", NoopEnricher)
register_enricher("table", TableEnricher)


def lookup_enricher(name: str, **options: Any) -> Enricher:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise UnknownEnricher(name) from None
    return factory(**options)


# rounds


@dataclass(frozen=True)
class RoundConfig:
    plan: GridPlan
    sources: tuple[SourceDescriptor, ...]
    interval: timedelta = timedelta(hours=2)
    workers: int = 4
    enrichers: tuple[str, ...] = ()
    enricher_options: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "enrichers", tuple(self.enrichers))
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.interval <= timedelta(0):
            raise ValueError("interval must be positive")
        if len({s.source_id for s in self.sources}) != len(self.sources):
            raise ValueError("duplicate source ids in round config")

    def build_enrichers(self) -> list[Enricher]:
        return [lookup_enricher(n, **dict(self.enricher_options.get(n, {}))) for n in self.enrichers]


@dataclass
class _RoundResult:
    snapshot: Snapshot
    warnings: list[str]
    requests: int
    per_source: dict[str, int]


def _fetch_task(adapter: SourceAdapter, plan: GridPlan, index: tuple[int, int], clock: Clock):
    seg = plan.segment(index)
    try:
        res = adapter.fetch_segment_paged(seg.fetch_bounds)
        note = None
    except DepthExceeded as exc:
        res = exc.partial
        note = str(exc)
    return refine(res.records, now=clock.now()), res.requests, note


def _merge(results: list[tuple[tuple[int, int], int, list[ThingRecord]]]) -> list[ThingRecord]:
    """Drop cross-segment duplicates: latest observed_at wins, then the smaller segment index."""
    best: dict[tuple[str, str], tuple[tuple, ThingRecord]] = {}
    for index, seq, records in results:
        for r in records:
            rank = (-r.observed_at.timestamp(), index, seq)
            key = (r.source_id, r.object_id)
            cur = best.get(key)
            if cur is None or rank < cur[0]:
                best[key] = (rank, r)
    return [r for _, r in best.values()]


def _execute_round(cfg: RoundConfig, queue: ScanQueue, clock: Clock, transport: Transport | None) -> _RoundResult:
    if len(queue) == 0:
        raise ValueError("scan queue is empty")
    round_ts = to_utc(clock.now())
    enrichers = cfg.build_enrichers()
    adapters = {s.source_id: SourceAdapter(s, transport, clock=clock.now) for s in cfg.sources}
    pending = {sid: 0 for sid in adapters}
    held: dict[str, list] = {sid: [] for sid in adapters}
    failures: dict[str, list[str]] = {sid: [] for sid in adapters}
    notes: list[str] = []
    merged: dict[str, list[ThingRecord]] = {}
    requests = 0

    with ThreadPoolExecutor(max_workers=cfg.workers, thread_name_prefix="crawl") as pool:
        futures = {}
        for seq, index in enumerate(queue):
            for sid, adapter in adapters.items():
                fut = pool.submit(_fetch_task, adapter, cfg.plan, tuple(index), clock)
                futures[fut] = (sid, tuple(index), seq)
                pending[sid] += 1
        for fut in as_completed(futures):
            sid, index, seq = futures[fut]
            try:
                records, n_req, note = fut.result()
            except SourceError as exc:
                failures[sid].append(f"{type(exc).__name__}: {exc}")
            else:
                requests += n_req
                held[sid].append((index, seq, records))
                if note:
                    notes.append(f"{sid} segment {list(index)}: {note}")
            pending[sid] -= 1
            if pending[sid] == 0:
                # every subset of this source is in: merge, then enrich
                recs = _merge(sorted(held.pop(sid), key=lambda t: (t[0], t[1])))
                for e in enrichers:
                    recs = [e.enrich(r) for r in recs]
                merged[sid] = recs

    messages = list(notes)
    failed_all = []
    for sid, errs in failures.items():
        if errs:
            total = sum(1 for s, _, _ in futures.values() if s == sid)
            messages.append(f"source {sid}: {len(errs)}/{total} fetches failed ({errs[0]})")
            if len(errs) == total:
                failed_all.append(sid)
    if failed_all and len(failed_all) == len(adapters):
        raise AllSourcesFailed("; ".join(messages))

    records = [r for sid in sorted(merged) for r in merged[sid]]
    snap = Snapshot(round_ts, frozenset(records), frozenset(adapters))
    return _RoundResult(snap, messages, requests, {sid: len(v) for sid, v in sorted(merged.items())})


def run_round(cfg: RoundConfig, queue: ScanQueue, clock: Clock, transport: Transport | None = None) -> Snapshot:
    """Run one crawl round. Per-source failures surface as ``SourceFailureWarning``."""
    result = _execute_round(cfg, queue, clock, transport)
    for msg in result.warnings:
        warnings.warn(msg, SourceFailureWarning, stacklevel=2)
    return result.snapshot


@dataclass
class RoundSummary:
    round: int
    round_timestamp: datetime
    records: int
    per_source: dict[str, int]
    requests: int
    queue: ScanQueue
    next_queue: ScanQueue
    plan: GridPlan
    warnings: list[str]

    def to_json(self) -> dict:
        return {
            "round": self.round,
            "round_timestamp": format_timestamp(self.round_timestamp),
            "records": self.records,
            "per_source": self.per_source,
            "requests": self.requests,
            "queue_length": len(self.queue),
            "next_queue_length": len(self.next_queue),
            "warnings": self.warnings,
        }


def run_campaign(cfg: RoundConfig, rounds: int, store: SnapshotStore, clock: Clock,
                 transport: Transport | None = None, sched: SchedConfig = SchedConfig(),
                 query_density: DensityMatrix | None = None,
                 on_round: Callable[[RoundSummary], None] | None = None) -> list[RoundSummary]:
    """Run ``rounds`` rounds, reweighting the scan queue from each snapshot's density."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    plan = cfg.plan
    queue = build_queue(plan, sched.prune_threshold, sched.revisit_every, sched.max_multiplicity)
    summaries: list[RoundSummary] = []
    for n in range(rounds):
        if n:
            target = summaries[-1].round_timestamp + cfg.interval
            clock.sleep(max(0.0, (target - to_utc(clock.now())).total_seconds()))
        if len(queue) == 0:
            # everything pruned: fall back to a full sweep rather than idling
            queue = build_queue(plan, -1.0, sched.revisit_every, sched.max_multiplicity)
        result = _execute_round(cfg, queue, clock, transport)
        for msg in result.warnings:
            log.warning(msg)
        # a store failure aborts the campaign; the manifest only ever holds complete rounds
        store.put_snapshot(result.snapshot)
        dens = density(result.snapshot, plan.region, plan.rows, plan.cols)
        plan = update_weights(plan, dens, query_density, sched.alpha, sched.beta)
        next_queue = build_queue(plan, sched.prune_threshold, sched.revisit_every, sched.max_multiplicity)
        summary = RoundSummary(n + 1, result.snapshot.round_timestamp, len(result.snapshot), result.per_source,
                               result.requests, queue, next_queue, plan, result.warnings)
        summaries.append(summary)
        if on_round is not None:
            on_round(summary)
        queue = next_queue
    return summaries

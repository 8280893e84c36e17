"""Client side of the spatial query protocol.

A source answers ``GET {base_url}/things?min_lat=..&min_lon=..&max_lat=..&max_lon=..&limit=..[&token=..]``
with ``{"server_time": ISO-8601, "truncated": bool, "items": [...]}``. Item
field names vary per source and are mapped onto canonical names by the
descriptor's ``field_map``.
"""

from __future__ import annotations

import json
import logging
import math
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence

from .errors import (
    AuthRejected,
    DepthExceeded,
    InsufficientSamples,
    ProtocolError,
    SourceUnreachable,
)
from .geo import BoundingBox, GeoPoint, ThingRecord, freeze_attributes, parse_timestamp, to_utc, validate_point

log = logging.getLogger(__name__)

__all__ = [
    "SourceDescriptor",
    "FetchResult",
    "QualificationReport",
    "Response",
    "Transport",
    "HttpTransport",
    "TokenBucket",
    "SourceAdapter",
    "fetch_segment",
    "fetch_segment_paged",
    "refine",
    "qualify",
    "poll_source",
]

CATEGORY_TAGS = ("cloud", "wot", "webmapping")
REQUIRED_FIELDS = ("object_id", "lat", "lon")
DEFAULT_FIELD_MAP: dict[str, tuple[str, ...]] = {
    "object_id": ("object_id", "id"),
    "lat": ("lat", "latitude"),
    "lon": ("lon", "lng", "longitude"),
    "observed_at": ("observed_at", "updated", "timestamp"),
}
MIN_SPLIT_DEGREES = 1e-6
FUTURE_SKEW = timedelta(seconds=60)


@dataclass(frozen=True)
class SourceDescriptor:
    source_id: str
    base_url: str
    page_limit: int = 100
    field_map: Mapping[str, Any] = field(default_factory=lambda: dict(DEFAULT_FIELD_MAP))
    category_tag: str = "webmapping"
    subtype: str = ""
    auth_token: str | None = None
    rate_limit: float | None = None  # requests per second, None = unthrottled
    max_in_flight: int = 1

    def __post_init__(self) -> None:
        if self.page_limit < 1:
            raise ValueError(f"{self.source_id}: page_limit must be >= 1")
        if self.category_tag not in CATEGORY_TAGS:
            raise ValueError(f"{self.source_id}: category_tag must be one of {CATEGORY_TAGS}")
        fm = {k: (v,) if isinstance(v, str) else tuple(v) for k, v in dict(self.field_map).items()}
        missing = [k for k in REQUIRED_FIELDS if not fm.get(k)]
        if missing:
            raise ValueError(f"{self.source_id}: field_map lacks {missing}")
        object.__setattr__(self, "field_map", fm)
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")

    @property
    def things_url(self) -> str:
        return self.base_url.rstrip("/") + "/things"


@dataclass(frozen=True)
class FetchResult:
    records: tuple[ThingRecord, ...]
    truncated: bool
    raw_count: int
    fetched_at: datetime
    requests: int = 1


@dataclass(frozen=True)
class QualificationReport:
    parses: bool
    valid_coords_fraction: float
    updates_observed: bool
    stable_ids: bool
    verdict: bool

    def to_json(self) -> dict:
        return {
            "parses": self.parses,
            "valid_coords_fraction": self.valid_coords_fraction,
            "updates_observed": self.updates_observed,
            "stable_ids": self.stable_ids,
            "verdict": self.verdict,
        }


# transport


@dataclass(frozen=True)
class Response:
    status: int
    body: bytes
    headers: Mapping[str, str] = field(default_factory=dict)


class Transport(Protocol):
    def get(self, url: str, params: Mapping[str, str]) -> Response: ...


class HttpTransport:
    """Plain ``urllib`` GETs; connection failures surface as ``SourceUnreachable``."""

    def __init__(self, timeout: float = 30.0):
        self.timeout = timeout

    def get(self, url: str, params: Mapping[str, str]) -> Response:
        full = url + ("?" + urllib.parse.urlencode(list(params.items())) if params else "")
        try:
            with urllib.request.urlopen(full, timeout=self.timeout) as resp:
                return Response(resp.status, resp.read(), dict(resp.headers))
        except urllib.error.HTTPError as exc:
            return Response(exc.code, exc.read() if exc.fp else b"", dict(exc.headers or {}))
        except (urllib.error.URLError, OSError) as exc:
            raise SourceUnreachable(f"{url}: {exc}") from exc


class TokenBucket:
    """Blocking token bucket. ``rate=None`` disables throttling."""

    def __init__(self, rate: float | None, burst: int = 1,
                 clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep):
        self.rate = rate
        self.capacity = max(1, burst)
        self._tokens = float(self.capacity)
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if not self.rate:
            return
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1:
                    self._tokens -= 1
                    return
                wait = (1 - self._tokens) / self.rate
            self._sleep(wait)


# parsing


def _first(item: Mapping[str, Any], names: Sequence[str]) -> tuple[str | None, Any]:
    for n in names:
        if n in item and item[n] is not None:
            return n, item[n]
    return None, None


def _as_float(value: Any) -> float | None:
    if isinstance(value, bool):
        return None
    try:
        out = float(value)
    except (TypeError, ValueError):
        return None
    return out if math.isfinite(out) else None


def parse_item(item: Any, desc: SourceDescriptor, fallback_time: datetime) -> ThingRecord | None:
    """Map one payload item onto a record, or None when it cannot be parsed."""
    if not isinstance(item, (dict, Mapping)):
        return None
    fm = desc.field_map
    used: set[str] = set()
    id_key, object_id = _first(item, fm["object_id"])
    lat_key, lat_raw = _first(item, fm["lat"])
    lon_key, lon_raw = _first(item, fm["lon"])
    if object_id is None or lat_key is None or lon_key is None:
        return None
    lat, lon = _as_float(lat_raw), _as_float(lon_raw)
    if lat is None or lon is None:
        return None
    used.update((id_key, lat_key, lon_key))
    observed_at = fallback_time
    ts_key, ts_raw = _first(item, fm.get("observed_at", ()))
    if ts_key is not None:
        try:
            observed_at = parse_timestamp(ts_raw)
        except (ValueError, OverflowError, OSError):
            return None
        used.add(ts_key)

    attrs: dict[str, Any] = {}
    for canonical, names in fm.items():
        if canonical in ("object_id", "lat", "lon", "observed_at"):
            continue
        key, value = _first(item, names)
        if key is not None:
            attrs[canonical] = value
            used.add(key)
    for k, v in item.items():
        if k not in used and k not in attrs:
            attrs[k] = v
    return ThingRecord(desc.source_id, str(object_id), GeoPoint(lat, lon), observed_at, freeze_attributes(attrs))


def _decode_envelope(body: bytes | str | Mapping) -> Mapping[str, Any]:
    if isinstance(body, Mapping):
        env = body
    else:
        try:
            env = json.loads(body)
        except (ValueError, UnicodeDecodeError) as exc:
            raise ProtocolError(f"payload is not JSON: {exc}") from exc
    if not isinstance(env, Mapping) or not isinstance(env.get("items"), list):
        raise ProtocolError("payload envelope lacks an items list")
    if not isinstance(env.get("truncated", False), bool):
        raise ProtocolError("truncated flag is not a boolean")
    return env


# adapter


class SourceAdapter:
    """Stateless protocol client for one source, apart from its throttle."""

    def __init__(self, desc: SourceDescriptor, transport: Transport | None = None,
                 clock: Callable[[], datetime] | None = None, max_retries: int = 3,
                 sleep: Callable[[float], None] = time.sleep):
        self.desc = desc
        self.transport = transport or HttpTransport()
        self.clock = clock or (lambda: datetime.now(timezone.utc))
        self.max_retries = max_retries
        self._sleep = sleep
        self._bucket = TokenBucket(desc.rate_limit)
        self._in_flight = threading.BoundedSemaphore(desc.max_in_flight)

    def _params(self, area: BoundingBox, limit: int) -> dict[str, str]:
        params = {
            "min_lat": repr(area.min_lat),
            "min_lon": repr(area.min_lon),
            "max_lat": repr(area.max_lat),
            "max_lon": repr(area.max_lon),
            "limit": str(limit),
        }
        if self.desc.auth_token:
            params["token"] = self.desc.auth_token
        return params

    def request(self, area: BoundingBox, limit: int) -> Mapping[str, Any]:
        """Issue one query and return the decoded envelope."""
        params = self._params(area, limit)
        for attempt in range(self.max_retries + 1):
            self._bucket.acquire()
            with self._in_flight:
                resp = self.transport.get(self.desc.things_url, params)
            if resp.status == 200:
                return _decode_envelope(resp.body)
            if resp.status in (401, 403):
                raise AuthRejected(f"{self.desc.source_id}: status {resp.status}")
            if resp.status == 429 and attempt < self.max_retries:
                delay = _as_float(resp.headers.get("Retry-After")) or 0.5
                log.info("%s throttled, retrying in %.2fs", self.desc.source_id, delay)
                self._sleep(delay)
                continue
            raise SourceUnreachable(f"{self.desc.source_id}: status {resp.status}")
        raise SourceUnreachable(f"{self.desc.source_id}: retries exhausted")

    def fetch_segment(self, area: BoundingBox, limit: int | None = None) -> FetchResult:
        limit = self.desc.page_limit if limit is None else limit
        if limit < 1:
            raise ValueError("limit must be >= 1")
        env = self.request(area, limit)
        fetched_at = self.clock()
        if env.get("server_time") is not None:
            try:
                fetched_at = parse_timestamp(env["server_time"])
            except ValueError as exc:
                raise ProtocolError(f"bad server_time {env['server_time']!r}") from exc
        items = env["items"]
        records = []
        for item in items:
            rec = parse_item(item, self.desc, fetched_at)
            if rec is not None:
                records.append(rec)
        return FetchResult(tuple(records), bool(env.get("truncated", False)), len(items), to_utc(fetched_at))

    def fetch_segment_paged(self, area: BoundingBox, limit: int | None = None) -> FetchResult:
        """Fetch ``area`` completely by bisecting whenever the source truncates.

        Splits alternate longitude, latitude, ... The upper half starts one ulp
        past the split line so halves never share points. Raises
        ``DepthExceeded`` (with the partial result attached) when a truncated
        box is already narrower than 1e-6 degrees in both directions.
        """
        limit = self.desc.page_limit if limit is None else limit
        merged: dict[str, ThingRecord] = {}
        raw = 0
        requests = 0
        fetched_at: datetime | None = None
        floor_hit = False
        stack: list[tuple[BoundingBox, int]] = [(area, 0)]
        while stack:
            box, depth = stack.pop()
            res = self.fetch_segment(box, limit)
            requests += 1
            raw += res.raw_count
            fetched_at = res.fetched_at if fetched_at is None else max(fetched_at, res.fetched_at)
            if res.truncated:
                halves = _bisect(box, depth)
                if halves is None:
                    floor_hit = True
                else:
                    # push upper first so the lower half is fetched first
                    stack.append((halves[1], depth + 1))
                    stack.append((halves[0], depth + 1))
                    continue
            for rec in res.records:
                prev = merged.get(rec.object_id)
                if prev is None or rec.observed_at > prev.observed_at:
                    merged[rec.object_id] = rec
        result = FetchResult(tuple(merged.values()), floor_hit, raw,
                             fetched_at or to_utc(self.clock()), requests)
        if floor_hit:
            raise DepthExceeded(f"{self.desc.source_id}: still truncated below {MIN_SPLIT_DEGREES} degrees",
                                partial=result)
        return result


def _halve(box: BoundingBox, along_lon: bool) -> tuple[BoundingBox, BoundingBox] | None:
    lo, hi = (box.min_lon, box.max_lon) if along_lon else (box.min_lat, box.max_lat)
    if hi - lo < MIN_SPLIT_DEGREES:
        return None
    mid = lo + (hi - lo) / 2
    # the upper half starts one float past mid so the halves never share a point
    upper = math.nextafter(mid, math.inf)
    if not (lo < mid and upper < hi):
        return None
    if along_lon:
        return (BoundingBox.from_bounds(box.min_lat, lo, box.max_lat, mid),
                BoundingBox.from_bounds(box.min_lat, upper, box.max_lat, hi))
    return (BoundingBox.from_bounds(lo, box.min_lon, mid, box.max_lon),
            BoundingBox.from_bounds(upper, box.min_lon, hi, box.max_lon))


def _bisect(box: BoundingBox, depth: int) -> tuple[BoundingBox, BoundingBox] | None:
    """Split alternately along longitude then latitude, falling back to the other axis."""
    first = depth % 2 == 0
    return _halve(box, first) or _halve(box, not first)


def fetch_segment(desc: SourceDescriptor, area: BoundingBox, limit: int | None = None,
                  transport: Transport | None = None, **kwargs) -> FetchResult:
    return SourceAdapter(desc, transport, **kwargs).fetch_segment(area, limit)


def fetch_segment_paged(desc: SourceDescriptor, area: BoundingBox, limit: int | None = None,
                        transport: Transport | None = None, **kwargs) -> FetchResult:
    return SourceAdapter(desc, transport, **kwargs).fetch_segment_paged(area, limit)


def refine(records: Iterable[ThingRecord], now: datetime | None = None) -> list[ThingRecord]:
    """Drop records with bad coordinates, no object id, or a timestamp in the future.

    ``now`` is the fetch clock; observations up to 60 s ahead of it are tolerated.
    """
    limit = to_utc(now or datetime.now(timezone.utc)) + FUTURE_SKEW
    out = []
    for r in records:
        if not r.object_id or not str(r.object_id).strip():
            continue
        if not validate_point(r.position):
            continue
        if r.observed_at > limit:
            continue
        out.append(r)
    return out


# qualification


def _jaccard(a: set, b: set) -> float:
    union = a | b
    return len(a & b) / len(union) if union else 0.0


def qualify(samples: Sequence[tuple[datetime, Any]], desc: SourceDescriptor, theta: float = 0.95,
            id_stability: float = 0.5) -> QualificationReport:
    """Screen a candidate source from a sequence of captured payloads.

    ``samples`` are ``(captured_at, payload)`` pairs in capture order; payloads
    may be raw bytes/text or already-decoded envelopes.
    """
    if len(samples) < 2:
        raise InsufficientSamples(f"need at least 2 samples, got {len(samples)}")
    times = [to_utc(t) for t, _ in samples]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise InsufficientSamples("capture timestamps must be strictly increasing")

    fm = desc.field_map
    parses = True
    total = valid = 0
    snapshots: list[dict[str, Mapping[str, Any]]] = []
    for _, payload in samples:
        try:
            env = _decode_envelope(payload)
        except ProtocolError:
            parses = False
            snapshots.append({})
            continue
        by_id: dict[str, Mapping[str, Any]] = {}
        for item in env["items"]:
            if not isinstance(item, Mapping):
                continue
            _, oid = _first(item, fm["object_id"])
            if oid is None:
                continue
            total += 1
            lat = _as_float(_first(item, fm["lat"])[1])
            lon = _as_float(_first(item, fm["lon"])[1])
            if lat is not None and lon is not None and validate_point(GeoPoint(lat, lon)):
                valid += 1
            by_id[str(oid)] = item
        snapshots.append(by_id)

    fraction = valid / total if total else 0.0
    updates = False
    stable = True
    for a, b in zip(snapshots, snapshots[1:]):
        if _jaccard(set(a), set(b)) < id_stability:
            stable = False
        if not updates:
            updates = any(a[k] != b[k] for k in a.keys() & b.keys())
    verdict = parses and fraction >= theta and updates and stable
    return QualificationReport(parses, fraction, updates, stable, verdict)


def poll_source(desc: SourceDescriptor, polls: int, interval: float, area: BoundingBox | None = None,
                transport: Transport | None = None, sleep: Callable[[float], None] = time.sleep,
                clock: Callable[[], datetime] | None = None) -> list[tuple[datetime, Any]]:
    """Capture ``polls`` raw envelopes from a live source, ``interval`` seconds apart."""
    area = area or BoundingBox.from_bounds(-90, -180, 90, 180)
    clock = clock or (lambda: datetime.now(timezone.utc))
    adapter = SourceAdapter(desc, transport)
    samples = []
    for i in range(polls):
        if i:
            sleep(interval)
        try:
            env = adapter.request(area, desc.page_limit)
        except ProtocolError:
            env = None
        captured = to_utc(clock())
        if samples and captured <= samples[-1][0]:
            captured = samples[-1][0] + timedelta(seconds=1)
        samples.append((captured, env if env is not None else b""))
    return samples

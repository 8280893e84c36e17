"""Simulated source farm speaking the spatial query protocol.

Each ``SimSourceSpec`` is exposed at ``/{source_id}/things``. The farm can be
queried in-process through :class:`FarmTransport` or over real HTTP with
:func:`serve`; both paths go through :meth:`SourceFarm.handle`, so responses
are byte-identical either way.

Control endpoints (simulator only, not part of the source protocol):
``GET /_sim/clock`` and ``GET /_sim/advance?seconds=S`` (or ``ticks=N``).
"""

from __future__ import annotations

import errno
import json
import math
import threading
import urllib.parse
import urllib.request
import zlib
from dataclasses import dataclass
from datetime import datetime
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from ..errors import AddressInUse
from ..geo import format_timestamp
from ..source import Response
from .world import World, rng_for, world_step

__all__ = [
    "SimSourceSpec",
    "SourceFarm",
    "FarmTransport",
    "FarmClock",
    "RemoteSimClock",
    "ServerHandle",
    "serve",
    "ground_truth_ids",
    "REQUIRED_ITEM_FIELDS",
]

REQUIRED_ITEM_FIELDS = ("id", "lat", "lng", "updated")


@dataclass(frozen=True)
class SimSourceSpec:
    source_id: str
    coverage: float = 1.0
    delay: float = 0.0  # seconds, quantized down to whole ticks
    dropout: float = 0.0
    page_limit: int = 100
    requires_token: bool = False
    token: str = "sim-token"

    def __post_init__(self) -> None:
        if not 0.0 < self.coverage <= 1.0:
            raise ValueError(f"{self.source_id}: coverage must lie in (0, 1]")
        if self.delay < 0:
            raise ValueError(f"{self.source_id}: delay must be >= 0")
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError(f"{self.source_id}: dropout must lie in [0, 1]")
        if self.page_limit < 1:
            raise ValueError(f"{self.source_id}: page_limit must be >= 1")
        if "/" in self.source_id or not self.source_id:
            raise ValueError(f"bad source id {self.source_id!r}")


def _json_response(status: int, obj: Any, headers: Mapping[str, str] | None = None) -> Response:
    body = json.dumps(obj, separators=(",", ":")).encode("utf-8")
    return Response(status, body, {"Content-Type": "application/json", **(headers or {})})


class SourceFarm:
    """The world plus the sources that publish it. The world has a single writer."""

    def __init__(self, world: World, sources: Sequence[SimSourceSpec], ticks_per_request: int = 0):
        self._world = world
        self.sources = {s.source_id: s for s in sources}
        if len(self.sources) != len(sources):
            raise ValueError("duplicate simulated source ids")
        self.ticks_per_request = int(ticks_per_request)
        self._lock = threading.Lock()
        n = world.model.size
        self._visible = {
            s.source_id: world.model.coverage_rank < int(math.floor(s.coverage * n + 0.5))
            for s in sources
        }

    @property
    def world(self) -> World:
        return self._world

    def advance(self, ticks: int) -> World:
        with self._lock:
            if ticks > 0:
                self._world = world_step(self._world, ticks)
            return self._world

    def advance_seconds(self, seconds: float) -> World:
        return self.advance(int(seconds // self._world.config.tick))

    def delay_ticks(self, spec: SimSourceSpec) -> int:
        return int(spec.delay // self._world.config.tick)

    def visible_mask(self, source_id: str) -> np.ndarray:
        return self._visible[source_id]

    # request handling

    def handle(self, path: str, query: Mapping[str, str]) -> Response:
        parts = [p for p in path.split("/") if p]
        if parts[:1] == ["_sim"]:
            return self._control(parts[1:], query)
        if len(parts) != 2 or parts[1] != "things":
            return _json_response(404, {"error": "not found"})
        spec = self.sources.get(parts[0])
        if spec is None:
            return _json_response(404, {"error": f"unknown source {parts[0]}"})
        if spec.requires_token and query.get("token") != spec.token:
            return _json_response(401, {"error": "token required"})
        try:
            box = [float(query[k]) for k in ("min_lat", "min_lon", "max_lat", "max_lon")]
            limit = int(query.get("limit", spec.page_limit))
        except (KeyError, ValueError):
            return _json_response(400, {"error": "bad query parameters"})
        if limit < 1 or any(math.isnan(v) for v in box):
            return _json_response(400, {"error": "bad query parameters"})
        with self._lock:
            world = self._world
            if self.ticks_per_request:
                self._world = world_step(world, self.ticks_per_request)
        return _json_response(200, self.query(spec, world, box, limit, _canonical_query(query)))

    def query(self, spec: SimSourceSpec, world: World, box: Sequence[float], limit: int,
              request_key: str = "") -> dict:
        min_lat, min_lon, max_lat, max_lon = box
        st = world.state(world.tick - self.delay_ticks(spec))
        mask = (
            st.alive & self._visible[spec.source_id]
            & (st.lat >= min_lat) & (st.lat <= max_lat)
            & (st.lon >= min_lon) & (st.lon <= max_lon)
        )
        idx = np.flatnonzero(mask)
        effective = min(limit, spec.page_limit)
        truncated = idx.size > effective
        idx = idx[:effective]
        rng = rng_for(world.config.seed, "dropout", spec.source_id, world.tick, request_key)
        items = []
        for i in idx:
            item = _item(world, st, int(i))
            if spec.dropout > 0:
                optional = [k for k in item if k not in REQUIRED_ITEM_FIELDS]
                drops = rng.random(len(optional)) < spec.dropout
                for k, d in zip(optional, drops):
                    if d:
                        del item[k]
            items.append(item)
        return {"server_time": format_timestamp(world.now), "truncated": bool(truncated), "items": items}

    def _control(self, parts: list[str], query: Mapping[str, str]) -> Response:
        if parts == ["clock"]:
            pass
        elif parts == ["advance"]:
            try:
                if "ticks" in query:
                    self.advance(int(query["ticks"]))
                else:
                    self.advance_seconds(float(query.get("seconds", 0)))
            except ValueError:
                return _json_response(400, {"error": "bad advance request"})
        elif parts == ["sources"]:
            return _json_response(200, {"sources": sorted(self.sources)})
        else:
            return _json_response(404, {"error": "not found"})
        w = self._world
        return _json_response(200, {"tick": w.tick, "time": format_timestamp(w.now)})


def _canonical_query(query: Mapping[str, str]) -> str:
    return "&".join(f"{k}={query[k]}" for k in sorted(query) if k != "token")


def _item(world: World, st, i: int) -> dict:
    oid = st.ids[i]
    item: dict[str, Any] = {
        "id": oid,
        "lat": float(st.lat[i]),
        "lng": float(st.lon[i]),
        "updated": format_timestamp(world.datetime_at(st.observed[i])),
    }
    if st.kind[i] == 0:
        item["kind"] = "mover"
        item["heading"] = round(float(st.heading[i]), 3)
        item["registration"] = "VH-" + format(zlib.crc32(oid.encode()) % 17576, "05d")
        item["callsign"] = oid.upper()
    else:
        item["kind"] = "env"
        item["value"] = float(st.value[i])
        item["unit"] = "C"
        item["title"] = f"sensor {oid}"
    return item


def ground_truth_ids(farm: SourceFarm, sources: Iterable[str] | None = None) -> dict[str, set[str]]:
    """Exact ids each source would serve for a whole-world query right now."""
    out = {}
    world = farm.world
    for sid in sources or farm.sources:
        spec = farm.sources[sid]
        st = world.state(world.tick - farm.delay_ticks(spec))
        mask = st.alive & farm.visible_mask(sid)
        out[sid] = {st.ids[i] for i in np.flatnonzero(mask)}
    return out


class FarmTransport:
    """In-process transport: routes ``http://host/{source}/things`` to a farm."""

    def __init__(self, farm: SourceFarm):
        self.farm = farm

    def get(self, url: str, params: Mapping[str, str]) -> Response:
        parsed = urllib.parse.urlsplit(url)
        query = dict(urllib.parse.parse_qsl(parsed.query))
        query.update(params)
        return self.farm.handle(parsed.path, query)


class FarmClock:
    """Simulated clock backed by an in-process farm; sleeping advances the world."""

    def __init__(self, farm: SourceFarm):
        self.farm = farm

    def now(self) -> datetime:
        return self.farm.world.now

    def sleep(self, seconds: float) -> None:
        self.farm.advance_seconds(seconds)


class RemoteSimClock:
    """Simulated clock of a simulator reached over HTTP through its control endpoints."""

    def __init__(self, base_url: str, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def _call(self, path: str) -> dict:
        with urllib.request.urlopen(self.base_url + path, timeout=self.timeout) as resp:
            return json.loads(resp.read())

    def now(self) -> datetime:
        from ..geo import parse_timestamp

        return parse_timestamp(self._call("/_sim/clock")["time"])

    def sleep(self, seconds: float) -> None:
        self._call(f"/_sim/advance?seconds={float(seconds)!r}")


class _Handler(BaseHTTPRequestHandler):
    farm: SourceFarm

    def do_GET(self) -> None:  # noqa: N802
        parsed = urllib.parse.urlsplit(self.path)
        query = dict(urllib.parse.parse_qsl(parsed.query))
        resp = self.server.farm.handle(parsed.path, query)  # type: ignore[attr-defined]
        self.send_response(resp.status)
        for k, v in resp.headers.items():
            self.send_header(k, v)
        self.send_header("Content-Length", str(len(resp.body)))
        self.end_headers()
        self.wfile.write(resp.body)

    do_POST = do_GET

    def log_message(self, format: str, *args: Any) -> None:
        pass


class ServerHandle:
    def __init__(self, server: ThreadingHTTPServer, farm: SourceFarm):
        self.server = server
        self.farm = farm
        self._thread = threading.Thread(target=server.serve_forever, name="sim-server", daemon=True)
        self._thread.start()

    @property
    def address(self) -> tuple[str, int]:
        host, port = self.server.server_address[:2]
        return str(host), int(port)

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def source_url(self, source_id: str) -> str:
        return f"{self.url}/{source_id}"

    def close(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        self._thread.join(timeout=5)

    def __enter__(self) -> "ServerHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def parse_address(address: str | tuple[str, int]) -> tuple[str, int]:
    if isinstance(address, tuple):
        return address
    host, _, port = address.rpartition(":")
    return host or "127.0.0.1", int(port)


def serve(world: World | SourceFarm, sources: Sequence[SimSourceSpec] = (),
          address: str | tuple[str, int] = ("127.0.0.1", 0), ticks_per_request: int = 0) -> ServerHandle:
    """Start a threaded HTTP server for the farm in the background."""
    farm = world if isinstance(world, SourceFarm) else SourceFarm(world, sources, ticks_per_request)
    try:
        server = ThreadingHTTPServer(parse_address(address), _Handler)
    except OSError as exc:
        if exc.errno == errno.EADDRINUSE:
            raise AddressInUse(f"address {address} already in use") from exc
        raise
    server.daemon_threads = True
    server.farm = farm  # type: ignore[attr-defined]
    return ServerHandle(server, farm)

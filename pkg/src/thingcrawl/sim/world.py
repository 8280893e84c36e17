"""Deterministic simulated world of moving objects and environmental sensors.

The world is a pure function of its configuration and an integer tick, so any
past state can be recomputed exactly. That is what makes source delay cheap:
a delayed source simply evaluates the world at an earlier tick.
"""

from __future__ import annotations

import threading
import zlib
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from functools import lru_cache
from typing import Any, Mapping

import numpy as np

from ..analytics.density import DensityMatrix, grid_edges
from ..geo import BoundingBox, parse_timestamp

__all__ = [
    "PopulationSpec",
    "WorldConfig",
    "World",
    "WorldState",
    "make_world",
    "world_step",
    "ground_truth",
    "DAY",
]

DAY = 86400
DEFAULT_EPOCH = datetime(2015, 8, 25, tzinfo=timezone.utc)


def _key(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))


def rng_for(seed: int, *parts: int | str) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFF] + [p if isinstance(p, int) else _key(p) for p in parts]
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass(frozen=True)
class PopulationSpec:
    """One homogeneous group of objects.

    Movers travel ``speed`` degrees per tick along a seeded heading (or the
    shared ``heading``, in degrees clockwise from north) and reflect at the
    region edges. With ``period`` (seconds) they fly out for half the period
    and back for the other half, so positions repeat exactly every period.

    Env sensors stay put. Every ``update_period`` seconds each sensor takes a
    new reading with probability ``update_probability``. With
    ``value_revert`` the sensor follows a daily cycle instead: in the first
    update period of each simulated day it is excited with that probability,
    holds the new reading for a seeded number of periods, and is back on its
    initial reading by the next day boundary.
    """

    kind: str
    count: int
    speed: float = 0.0
    update_period: float = 6 * 3600
    update_probability: float = 0.0
    value_revert: bool = False
    period: float | None = None
    heading: float | None = None
    center: tuple[float, float] | None = None
    spread: float | None = None
    active_until: float | None = None
    name: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("mover", "env_sensor"):
            raise ValueError(f"unknown population kind {self.kind!r}")
        if self.count < 0:
            raise ValueError("count must be >= 0")
        if not 0.0 <= self.update_probability <= 1.0:
            raise ValueError("update_probability must lie in [0, 1]")
        if self.update_period <= 0:
            raise ValueError("update_period must be positive")
        if self.period is not None and self.period <= 0:
            raise ValueError("period must be positive")
        if self.center is not None:
            object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))


@dataclass(frozen=True)
class WorldConfig:
    seed: int
    region: BoundingBox
    populations: tuple[PopulationSpec, ...] = ()
    tick: float = 60.0
    epoch: datetime = DEFAULT_EPOCH

    def __post_init__(self) -> None:
        object.__setattr__(self, "populations", tuple(self.populations))
        if self.tick <= 0:
            raise ValueError("tick must be positive")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "WorldConfig":
        region = d["region"]
        if isinstance(region, str):
            region = BoundingBox.parse(region)
        elif isinstance(region, Mapping):
            region = BoundingBox.from_json(region)
        else:
            region = BoundingBox.from_bounds(*region)
        pops = []
        for p in d.get("populations", ()):
            p = dict(p)
            if "center" in p and p["center"] is not None:
                p["center"] = tuple(p["center"])
            pops.append(PopulationSpec(**p))
        kwargs: dict[str, Any] = {"seed": int(d.get("seed", 0)), "region": region, "populations": tuple(pops)}
        if "tick" in d:
            kwargs["tick"] = float(d["tick"])
        if "epoch" in d:
            kwargs["epoch"] = parse_timestamp(d["epoch"])
        return cls(**kwargs)


@dataclass(frozen=True)
class WorldState:
    """Columnar view of every object at one tick."""

    tick: int
    time: float  # seconds since epoch
    ids: tuple[str, ...]
    kind: np.ndarray  # 0 mover, 1 env
    lat: np.ndarray
    lon: np.ndarray
    observed: np.ndarray  # seconds since epoch of the current reading
    value: np.ndarray  # nan for movers
    heading: np.ndarray  # nan for env sensors
    alive: np.ndarray


def _fold(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    span = hi - lo
    y = np.mod(x - lo, 2 * span)
    return lo + np.where(y > span, 2 * span - y, y)


class _Population:
    def __init__(self, index: int, spec: PopulationSpec, cfg: WorldConfig):
        self.index = index
        self.spec = spec
        self.cfg = cfg
        n = spec.count
        region = cfg.region
        rng = rng_for(cfg.seed, "population", index)
        if spec.center is None:
            lat = rng.uniform(region.min_lat, region.max_lat, n)
            lon = rng.uniform(region.min_lon, region.max_lon, n)
        else:
            spread = spec.spread if spec.spread is not None else 0.0
            lat = spec.center[0] + rng.uniform(-spread, spread, n)
            lon = spec.center[1] + rng.uniform(-spread, spread, n)
            lat = np.clip(lat, region.min_lat, region.max_lat)
            lon = np.clip(lon, region.min_lon, region.max_lon)
        if spec.heading is None:
            heading = rng.uniform(0.0, 360.0, n)
        else:
            heading = np.full(n, float(spec.heading))
        self.lat0 = lat
        self.lon0 = lon
        self.heading = heading
        rad = np.deg2rad(heading)
        self.dlat = np.cos(rad)
        self.dlon = np.sin(rad)
        self.value0 = np.round(rng.uniform(10.0, 30.0, n), 2)
        tag = spec.name or f"p{index}"
        self.ids = tuple(f"{tag}-{i:06d}" for i in range(n))
        self._events: list[np.ndarray] = []
        self._lock = threading.Lock()

    # env sensor helpers

    def _event_row(self, k: int) -> np.ndarray:
        """Which sensors take a new reading at update boundary ``k`` (k >= 1)."""
        with self._lock:
            while len(self._events) < k:
                j = len(self._events) + 1
                draw = rng_for(self.cfg.seed, "events", self.index, j).random(self.spec.count)
                self._events.append(draw < self.spec.update_probability)
            return self._events[k - 1]

    def _reading(self, k: np.ndarray | int, salt: str) -> np.ndarray:
        out = np.empty(self.spec.count)
        ks = np.broadcast_to(np.asarray(k), (self.spec.count,))
        for kv in np.unique(ks):
            sel = ks == kv
            noise = rng_for(self.cfg.seed, salt, self.index, int(kv)).uniform(-5.0, 5.0, self.spec.count)
            out[sel] = noise[sel]
        return out

    def env_state(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        spec = self.spec
        n = spec.count
        period = spec.update_period
        if not spec.value_revert:
            k = int(t // period)
            last = np.zeros(n, dtype=np.int64)
            for j in range(1, k + 1):
                last[self._event_row(j)] = j
            value = self.value0.copy()
            changed = last > 0
            if changed.any():
                value[changed] = np.round(self.value0[changed] + self._reading(last, "reading")[changed], 2)
            return value, last * period
        slots = max(2, int(DAY // period))
        day = int(t // DAY)
        slot = int((t - day * DAY) // period)
        rng = rng_for(self.cfg.seed, "daily", self.index, day)
        excited = rng.random(n) < spec.update_probability
        hold = rng.integers(1, slots, n)  # 1 .. slots-1 periods
        active = excited & (slot >= 1) & (slot <= hold)
        value = self.value0.copy()
        observed = np.zeros(n, dtype=np.float64)
        if active.any():
            bump = np.round(self.value0 + self._reading(day, "daily-reading"), 2)
            value[active] = bump[active]
            observed[active] = day * DAY + period
        return value, observed

    def state(self, tick: int) -> tuple[np.ndarray, ...]:
        spec = self.spec
        t = tick * self.cfg.tick
        n = spec.count
        region = self.cfg.region
        if spec.kind == "mover":
            if spec.period is None:
                steps = float(tick)
            else:
                p = spec.period / self.cfg.tick
                u = np.mod(float(tick), p)
                steps = u if u <= p / 2 else p - u
            d = spec.speed * steps
            lat = _fold(self.lat0 + self.dlat * d, region.min_lat, region.max_lat)
            lon = _fold(self.lon0 + self.dlon * d, region.min_lon, region.max_lon)
            observed = np.full(n, t)
            value = np.full(n, np.nan)
            heading = self.heading
            kind = np.zeros(n, dtype=np.int8)
        else:
            lat, lon = self.lat0, self.lon0
            value, observed = self.env_state(t)
            heading = np.full(n, np.nan)
            kind = np.ones(n, dtype=np.int8)
        alive = np.ones(n, dtype=bool)
        if spec.active_until is not None and t >= spec.active_until:
            alive[:] = False
        return lat, lon, observed, value, heading, kind, alive


class WorldModel:
    """Static, seeded parameters of a world; states are derived per tick."""

    def __init__(self, cfg: WorldConfig):
        self.cfg = cfg
        self.populations = [_Population(i, spec, cfg) for i, spec in enumerate(cfg.populations)]
        self.ids: tuple[str, ...] = tuple(i for p in self.populations for i in p.ids)
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("population names collide; object ids must be unique")
        # one shared ranking makes coverage subsets nested across sources
        self.coverage_rank = np.argsort(np.argsort(rng_for(cfg.seed, "coverage").random(len(self.ids)), kind="stable"),
                                        kind="stable")
        self._state = lru_cache(maxsize=256)(self._compute)

    @property
    def size(self) -> int:
        return len(self.ids)

    def _compute(self, tick: int) -> WorldState:
        parts = [p.state(tick) for p in self.populations]
        if parts:
            cols = [np.concatenate([part[i] for part in parts]) for i in range(7)]
        else:
            cols = [np.empty(0)] * 6 + [np.empty(0, dtype=bool)]
        lat, lon, observed, value, heading, kind, alive = cols
        return WorldState(tick, tick * self.cfg.tick, self.ids, kind, lat, lon, observed, value, heading,
                          alive.astype(bool))

    def state(self, tick: int) -> WorldState:
        return self._state(max(0, int(tick)))


@dataclass(frozen=True)
class World:
    model: WorldModel = field(compare=False)
    tick: int = 0

    @property
    def config(self) -> WorldConfig:
        return self.model.cfg

    @property
    def time(self) -> float:
        return self.tick * self.model.cfg.tick

    @property
    def now(self) -> datetime:
        return self.model.cfg.epoch + timedelta(seconds=self.time)

    def state(self, tick: int | None = None) -> WorldState:
        return self.model.state(self.tick if tick is None else tick)

    def datetime_at(self, seconds: float) -> datetime:
        return self.model.cfg.epoch + timedelta(seconds=float(seconds))


def make_world(cfg: WorldConfig) -> World:
    return World(WorldModel(cfg), 0)


def world_step(world: World, ticks: int = 1) -> World:
    if ticks < 1:
        raise ValueError("ticks must be >= 1")
    return World(world.model, world.tick + int(ticks))


def ground_truth(world: World, region: BoundingBox, rows: int, cols: int,
                 tick: int | None = None) -> DensityMatrix:
    """Exact cell census of live objects."""
    st = world.state(tick)
    lat, lon = st.lat[st.alive], st.lon[st.alive]
    lat_edges = grid_edges(region.min_lat, region.max_lat, rows)
    lon_edges = grid_edges(region.min_lon, region.max_lon, cols)
    counts = np.zeros((rows, cols), dtype=np.int64)
    for r in range(rows):
        top_closed = r == rows - 1
        in_row = (lat >= lat_edges[r]) & ((lat <= lat_edges[r + 1]) if top_closed else (lat < lat_edges[r + 1]))
        for c in range(cols):
            right_closed = c == cols - 1
            in_col = (lon >= lon_edges[c]) & ((lon <= lon_edges[c + 1]) if right_closed else (lon < lon_edges[c + 1]))
            counts[r, c] = int(np.count_nonzero(in_row & in_col))
    return DensityMatrix(region, counts, world.datetime_at(st.time))

"""TOML configuration for crawls and simulated worlds."""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .geo import BoundingBox
from .grid import GridPlan, SchedConfig, make_grid
from .pipeline import RoundConfig
from .source import DEFAULT_FIELD_MAP, SourceDescriptor

__all__ = ["CrawlConfig", "load_toml", "crawl_config_from_dict", "load_crawl_config", "sim_config_from_dict",
           "parse_region", "TOKEN_ENV"]

TOKEN_ENV = "THINGCRAWL_TOKEN"


def load_toml(path: str | Path) -> dict[str, Any]:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def parse_region(value: Any) -> BoundingBox:
    if isinstance(value, BoundingBox):
        return value
    if isinstance(value, str):
        return BoundingBox.parse(value)
    if isinstance(value, Mapping):
        return BoundingBox.from_json(value)
    return BoundingBox.from_bounds(*value)


@dataclass
class CrawlConfig:
    round: RoundConfig
    sched: SchedConfig = field(default_factory=SchedConfig)
    clock: str = "wall"
    sim_control: str | None = None
    query_log: str | None = None
    query_window_days: float | None = None

    @property
    def plan(self) -> GridPlan:
        return self.round.plan


def _source(d: Mapping[str, Any], env_token: str | None) -> SourceDescriptor:
    d = dict(d)
    fm = dict(DEFAULT_FIELD_MAP)
    fm.update(d.pop("field_map", {}) or {})
    token = d.pop("auth_token", None) or env_token
    return SourceDescriptor(field_map=fm, auth_token=token, **d)


def crawl_config_from_dict(d: Mapping[str, Any], overrides: Mapping[str, Any] | None = None,
                           base_dir: Path | None = None) -> CrawlConfig:
    """Build a crawl config; ``overrides`` use dotted keys such as ``round.workers``."""
    d = {k: dict(v) if isinstance(v, Mapping) else v for k, v in d.items()}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, name = key.partition(".")
        d.setdefault(section, {})[name] = value

    grid = d.get("grid", {})
    if "region" not in grid:
        raise ValueError("config [grid] needs a region")
    plan = make_grid(parse_region(grid["region"]), int(grid.get("rows", 4)), int(grid.get("cols", 4)),
                     float(grid.get("margin_fraction", 0.01)), str(grid.get("margin_mode", "inset")))
    s = d.get("sched", {})
    sched = SchedConfig(
        alpha=float(s.get("alpha", 1.0)),
        beta=float(s.get("beta", 1.0)),
        prune_threshold=float(s.get("prune_threshold", 0.0)),
        revisit_every=int(s.get("revisit_every", 10)),
        max_multiplicity=int(s["max_multiplicity"]) if s.get("max_multiplicity") is not None else None,
    )
    env_token = os.environ.get(TOKEN_ENV) or None
    sources = tuple(_source(x, env_token) for x in d.get("sources", ()))
    if not sources:
        raise ValueError("config needs at least one [[sources]] entry")
    r = d.get("round", {})
    enrich = d.get("enrich", {})
    names = tuple(enrich.get("names", ()))
    options = {}
    for n in names:
        opts = dict(enrich.get(n, {}) or {})
        if "path" in opts and base_dir is not None and not Path(opts["path"]).is_absolute():
            opts["path"] = str(base_dir / opts["path"])
        options[n] = opts
    round_cfg = RoundConfig(
        plan=plan,
        sources=sources,
        interval=timedelta(seconds=float(r.get("interval", 7200))),
        workers=int(r.get("workers", 4)),
        enrichers=names,
        enricher_options=options,
    )
    q = d.get("queries", {})
    log = q.get("log")
    if log and base_dir is not None and not Path(log).is_absolute():
        log = str(base_dir / log)
    window = s.get("query_window_days")
    return CrawlConfig(round_cfg, sched, str(r.get("clock", "wall")), r.get("sim_control"), log,
                       float(window) if window is not None else None)


def load_crawl_config(path: str | Path, overrides: Mapping[str, Any] | None = None) -> CrawlConfig:
    return crawl_config_from_dict(load_toml(path), overrides, Path(path).resolve().parent)


def sim_config_from_dict(d: Mapping[str, Any]):
    """Return ``(WorldConfig, [SimSourceSpec], ticks_per_request)`` from a world TOML document."""
    from .sim.farm import SimSourceSpec
    from .sim.world import WorldConfig

    world = dict(d.get("world", d))
    if "populations" not in world and "populations" in d:
        world["populations"] = d["populations"]
    ticks_per_request = int(world.pop("ticks_per_request", 0))
    cfg = WorldConfig.from_dict(world)
    sources = [SimSourceSpec(**dict(s)) for s in d.get("sources", ())]
    if not sources:
        raise ValueError("world config needs at least one [[sources]] entry")
    return cfg, sources, ticks_per_request

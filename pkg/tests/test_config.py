from __future__ import annotations

from datetime import timedelta

import pytest

from thingcrawl.config import TOKEN_ENV, crawl_config_from_dict, load_crawl_config, parse_region, sim_config_from_dict
from thingcrawl.geo import BoundingBox
from thingcrawl.source import DEFAULT_FIELD_MAP

BASE = {
    "grid": {"region": [0, 0, 10, 10], "rows": 3, "cols": 2, "margin_mode": "overlap"},
    "sched": {"prune_threshold": 0.1, "revisit_every": 3, "max_multiplicity": 4},
    "round": {"interval": 3600, "workers": 2, "clock": "sim"},
    "sources": [{"source_id": "a", "base_url": "http://x/a", "field_map": {"id": "uid"}},
                {"source_id": "b", "base_url": "http://x/b", "auth_token": "own"}],
}


def test_parse_region_forms():
    box = BoundingBox.from_bounds(0, 1, 2, 3)
    assert parse_region("0,1,2,3") == box
    assert parse_region([0, 1, 2, 3]) == box
    assert parse_region(box.to_json()) == box
    assert parse_region(box) is box


def test_crawl_config_fields(monkeypatch):
    monkeypatch.delenv(TOKEN_ENV, raising=False)
    cfg = crawl_config_from_dict(BASE)
    assert (cfg.plan.rows, cfg.plan.cols, cfg.plan.margin_mode) == (3, 2, "overlap")
    assert cfg.round.interval == timedelta(hours=1) and cfg.round.workers == 2
    assert cfg.clock == "sim"
    assert (cfg.sched.prune_threshold, cfg.sched.revisit_every, cfg.sched.max_multiplicity) == (0.1, 3, 4)
    a, b = cfg.round.sources
    assert a.field_map["id"] == ("uid",) and a.field_map["lat"] == DEFAULT_FIELD_MAP["lat"]
    assert a.auth_token is None and b.auth_token == "own"
    assert cfg.query_window_days is None


def test_env_token_fills_only_missing_tokens(monkeypatch):
    monkeypatch.setenv(TOKEN_ENV, "from-env")
    a, b = crawl_config_from_dict(BASE).round.sources
    assert a.auth_token == "from-env"
    assert b.auth_token == "own"


def test_overrides_win():
    cfg = crawl_config_from_dict(BASE, {"round.workers": 7, "grid.margin_fraction": 0.05, "round.clock": None})
    assert cfg.round.workers == 7 and cfg.plan.margin_fraction == 0.05 and cfg.clock == "sim"


@pytest.mark.parametrize("broken", [
    {"grid": {}, "sources": BASE["sources"]},
    {"grid": BASE["grid"]},
])
def test_missing_sections(broken):
    with pytest.raises(ValueError):
        crawl_config_from_dict(broken)


def test_load_resolves_relative_paths(tmp_path):
    (tmp_path / "crawl.toml").write_text(
        '[grid]\nregion = "0,0,1,1"\n[queries]\nlog = "q.jsonl"\n[sched]\nquery_window_days = 7\n'
        '[enrich]\nnames = ["table"]\n[enrich.table]\npath = "extra.jsonl"\n'
        '[[sources]]\nsource_id = "s"\nbase_url = "http://x/s"\n', encoding="utf-8")
    cfg = load_crawl_config(tmp_path / "crawl.toml")
    assert cfg.query_log == str(tmp_path / "q.jsonl")
    assert cfg.query_window_days == 7.0
    assert cfg.round.enrichers == ("table",)
    assert cfg.round.enricher_options["table"]["path"] == str(tmp_path / "extra.jsonl")


def test_shipped_configs_load():
    from pathlib import Path

    from thingcrawl.config import load_toml

    root = Path(__file__).resolve().parents[1] / "configs"
    cfg = load_crawl_config(root / "crawl.toml")
    assert len(cfg.round.sources) == 3
    world, sources, _ = sim_config_from_dict(load_toml(root / "world.toml"))
    assert [s.source_id for s in sources] == [s.source_id for s in cfg.round.sources]
    assert sum(p.count for p in world.populations) == 10_000


def test_sim_config_needs_sources():
    with pytest.raises(ValueError):
        sim_config_from_dict({"world": {"seed": 1, "region": [0, 0, 1, 1], "populations": []}})

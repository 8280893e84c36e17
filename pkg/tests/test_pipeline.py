from __future__ import annotations

import json
from datetime import timedelta

import numpy as np
import pytest

import simkit
from thingcrawl.analytics.density import density
from thingcrawl.errors import AllSourcesFailed, OutOfOrderRound, SourceFailureWarning, UnknownEnricher
from thingcrawl.geo import GeoPoint, Snapshot, ThingRecord
from thingcrawl.grid import SchedConfig, build_queue
from thingcrawl.pipeline import (
    NoopEnricher,
    RoundConfig,
    TableEnricher,
    _merge,
    lookup_enricher,
    run_campaign,
    run_round,
)
from thingcrawl.sim.farm import FarmClock, FarmTransport, SimSourceSpec
from thingcrawl.sim.world import ground_truth
from thingcrawl.source import Response
from thingcrawl.store import SnapshotStore

T0 = simkit.EPOCH


def crawl_once(f, **kw):
    cfg = simkit.round_config(f, **kw)
    return run_round(cfg, build_queue(cfg.plan), FarmClock(f), FarmTransport(f))


def test_static_world_single_round():
    f = simkit.farm(simkit.world(simkit.movers(10)))
    snap = crawl_once(f)
    assert len(snap) == 10
    assert snap.round_timestamp == T0
    assert {r.object_id for r in snap.records} == set(f.world.state().ids)


def test_boundary_object_survives_once():
    w = simkit.world(simkit.movers(3))
    pop = w.model.populations[0]
    pop.lat0[:] = [5.0, 5.0, 2.0]  # the first two sit on segment edges
    pop.lon0[:] = [5.0, 2.0, 5.0]
    w.model._state.cache_clear()
    f = simkit.farm(w)
    for mode in ("inset", "overlap"):
        snap = crawl_once(f, margin=0.0 if mode == "inset" else 0.01, mode=mode)
        assert sorted(r.object_id for r in snap.records) == sorted(w.state().ids)


def test_dedup_keeps_latest_then_smallest_segment():
    def r(t, lat):
        return ThingRecord("s", "o", GeoPoint(lat, 0), T0 + timedelta(seconds=t))

    out = _merge([((0, 1), 0, [r(5, 1.0)]), ((0, 0), 1, [r(9, 2.0)]), ((1, 0), 2, [r(9, 3.0)])])
    assert len(out) == 1 and out[0].lat == 2.0


class FailingFor:
    """Wraps a transport and answers 503 for one source."""

    def __init__(self, inner, source_id, status=503):
        self.inner, self.source_id, self.status = inner, source_id, status

    def get(self, url, params):
        if f"/{self.source_id}/" in url:
            return Response(self.status, b"")
        return self.inner.get(url, params)


def test_source_down_degrades_with_warning():
    f = simkit.farm(simkit.world(simkit.movers(10)), SimSourceSpec("a"), SimSourceSpec("b"))
    cfg = simkit.round_config(f)
    with pytest.warns(SourceFailureWarning, match="source b"):
        snap = run_round(cfg, build_queue(cfg.plan), FarmClock(f), FailingFor(FarmTransport(f), "b"))
    assert {r.source_id for r in snap.records} == {"a"} and len(snap) == 10
    assert snap.source_ids == {"a", "b"}


def test_all_sources_down():
    f = simkit.farm(simkit.world(simkit.movers(10)))
    cfg = simkit.round_config(f)
    with pytest.raises(AllSourcesFailed):
        run_round(cfg, build_queue(cfg.plan), FarmClock(f), FailingFor(FarmTransport(f), "s1", 401))


def test_unsplittable_mass_keeps_partial_and_warns():
    w = simkit.world(simkit.movers(30))
    pop = w.model.populations[0]
    pop.lat0[:] = 1.0
    pop.lon0[:] = 1.0
    w.model._state.cache_clear()
    f = simkit.farm(w, SimSourceSpec("s1", page_limit=10))
    with pytest.warns(SourceFailureWarning, match="truncated"):
        snap = crawl_once(f)
    assert len(snap) == 10


def test_empty_queue_is_rejected():
    from thingcrawl.grid import ScanQueue

    f = simkit.farm(simkit.world(simkit.movers(1)))
    with pytest.raises(ValueError):
        run_round(simkit.round_config(f), ScanQueue(()), FarmClock(f), FarmTransport(f))


@pytest.mark.parametrize("workers", [1, 3, 8])
def test_worker_count_does_not_change_result(workers):
    f = simkit.farm(simkit.world(simkit.movers(400), simkit.sensors(100)), SimSourceSpec("a", page_limit=30),
                    SimSourceSpec("b", coverage=0.5, dropout=0.3, page_limit=30))
    base = crawl_once(f, rows=3, cols=3, workers=1)
    assert crawl_once(f, rows=3, cols=3, workers=workers) == base


def test_round_config_validation():
    f = simkit.farm(simkit.world(simkit.movers(1)))
    cfg = simkit.round_config(f)
    with pytest.raises(ValueError):
        RoundConfig(cfg.plan, cfg.sources, workers=0)
    with pytest.raises(ValueError):
        RoundConfig(cfg.plan, cfg.sources, interval=timedelta(0))
    with pytest.raises(ValueError):
        RoundConfig(cfg.plan, cfg.sources + cfg.sources)


# enrichers


def test_noop_enricher_is_identity():
    r = ThingRecord.create("s", "o", 1, 1, T0, {"a": 1})
    assert lookup_enricher("noop").enrich(r) is r
    assert isinstance(lookup_enricher("noop"), NoopEnricher)
    with pytest.raises(UnknownEnricher):
        lookup_enricher("shodan")


def test_table_enricher_fills_only_absent(tmp_path):
    side = tmp_path / "side.jsonl"
    side.write_text(json.dumps({"source_id": "s", "object_id": "o", "registration": "VH-1", "unit": "F"}) + "\n\n")
    e = lookup_enricher("table", path=str(side))
    assert isinstance(e, TableEnricher)
    r = ThingRecord.create("s", "o", 1, 1, T0, {"unit": "C", "callsign": None})
    out = e.enrich(r)
    assert out.attrs == {"unit": "C", "callsign": None, "registration": "VH-1"}
    other = ThingRecord.create("s", "x", 1, 1, T0)
    assert e.enrich(other) is other


def test_enrichment_in_round_preserves_count(tmp_path):
    f = simkit.farm(simkit.world(simkit.movers(20)), SimSourceSpec("s1", dropout=1.0))
    w = f.world
    side = tmp_path / "side.jsonl"
    side.write_text("".join(json.dumps({"source_id": "s1", "object_id": i, "registration": "R"}) + "\n"
                            for i in w.state().ids[:5]))
    plain = crawl_once(f)
    enriched = crawl_once(f, enrichers=("noop", "table"), enricher_options={"table": {"path": str(side)}})
    assert len(enriched) == len(plain) == 20
    assert sum(1 for r in enriched.records if r.attrs.get("registration") == "R") == 5
    assert all("registration" not in r.attrs for r in plain.records)


# campaign


def test_static_campaign_converges(tmp_path):
    w = simkit.world(simkit.movers(60, center=(2.0, 2.0), spread=1.5), simkit.movers(20, center=(8, 8), spread=1.5,
                                                                                  name="east"))
    f = simkit.farm(w)
    cfg = simkit.round_config(f)
    store = SnapshotStore(tmp_path)
    out = run_campaign(cfg, 3, store, FarmClock(f), FarmTransport(f))
    assert len(store.list_rounds()) == 3
    snaps = [store.get_snapshot(t) for t in store.list_rounds()]
    assert len({frozenset((r.object_id, r.lat, r.lon) for r in s.records) for s in snaps}) == 1
    assert [s.round_timestamp - T0 for s in snaps] == [timedelta(hours=h) for h in (0, 2, 4)]
    counts = density(snaps[0], cfg.plan.region, 2, 2).counts
    np.testing.assert_allclose(out[-1].plan.weights(), counts / counts.max())


def test_campaign_prunes_then_revisits(tmp_path):
    w = simkit.world(simkit.movers(20, center=(2, 2), spread=1.0),
                     simkit.movers(10, center=(8, 8), spread=1.0, active_until=3 * 7200, name="gone"))
    f = simkit.farm(w)
    cfg = simkit.round_config(f)
    sched = SchedConfig(prune_threshold=0.0, revisit_every=3)
    out = run_campaign(cfg, 9, SnapshotStore(tmp_path), FarmClock(f), FarmTransport(f), sched)
    m = [s.next_queue.multiplicity((1, 1)) for s in out]
    assert m[:3] == [1, 1, 1]
    assert 0 in m[3:] and 1 in m[4:]
    for s in out:
        er = s.plan.segment((1, 1)).empty_rounds
        assert s.next_queue.multiplicity((1, 1)) == (1 if er == 0 or er % 3 == 0 else 0)


def test_single_round_campaign(tmp_path):
    f = simkit.farm(simkit.world(simkit.movers(5)))
    store = SnapshotStore(tmp_path)
    (s,) = run_campaign(simkit.round_config(f), 1, store, FarmClock(f), FarmTransport(f))
    assert len(store.list_rounds()) == 1 and s.records == 5
    with pytest.raises(ValueError):
        run_campaign(simkit.round_config(f), 0, store, FarmClock(f), FarmTransport(f))


def test_store_failure_aborts_campaign(tmp_path):
    f = simkit.farm(simkit.world(simkit.movers(5)))
    store = SnapshotStore(tmp_path)
    store.put_snapshot(Snapshot(T0 + timedelta(days=1)))
    with pytest.raises(OutOfOrderRound):
        run_campaign(simkit.round_config(f), 3, store, FarmClock(f), FarmTransport(f))


def test_moving_world_matches_ground_truth_each_round(tmp_path):
    w = simkit.world(simkit.movers(300, speed=0.05))
    f = simkit.farm(w, SimSourceSpec("s1", page_limit=40))
    cfg = simkit.round_config(f, rows=4, cols=4)
    store = SnapshotStore(tmp_path)
    seen = []
    run_campaign(cfg, 4, store, FarmClock(f), FarmTransport(f),
                 on_round=lambda s: seen.append((s.round_timestamp, f.world.tick)))
    for t, tick in seen:
        snap = store.get_snapshot(t)
        truth = ground_truth(f.world, cfg.plan.region, 4, 4, tick=tick)
        assert density(snap, cfg.plan.region, 4, 4) == truth

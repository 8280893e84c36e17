from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import assume, example, given, strategies as st

from thingcrawl.analytics.density import DensityMatrix
from thingcrawl.errors import DimensionMismatch, InvalidMargin, InvalidRegion
from thingcrawl.geo import BoundingBox, GeoPoint, box_contains
from thingcrawl.grid import build_queue, make_grid, update_weights

SQUARE = BoundingBox.from_bounds(0, 0, 4, 4)


def dm(counts, region=SQUARE) -> DensityMatrix:
    return DensityMatrix(region, np.array(counts))


def bounds(b: BoundingBox):
    return (b.min_lat, b.min_lon, b.max_lat, b.max_lon)


def test_zero_margin_tiling():
    plan = make_grid(SQUARE, 2, 2, 0.0)
    assert len(plan) == 4
    s = plan.segment((0, 0))
    assert bounds(s.bounds) == (0, 0, 2, 2)
    assert s.fetch_bounds == s.bounds


def test_inset_margin_arithmetic():
    s = make_grid(SQUARE, 2, 2, 0.05).segment((0, 0))
    assert bounds(s.fetch_bounds) == pytest.approx((0.1, 0.1, 1.9, 1.9), abs=1e-12)


def test_identity_tiling():
    (s,) = make_grid(SQUARE, 1, 1, 0.0).segments
    assert s.bounds == SQUARE and s.fetch_bounds == SQUARE


def test_rows_follow_latitude():
    plan = make_grid(BoundingBox.from_bounds(0, 0, 2, 4), 2, 1, 0.0)
    assert bounds(plan.segment((0, 0)).bounds) == (0, 0, 1, 4)
    assert bounds(plan.segment((1, 0)).bounds) == (1, 0, 2, 4)


def test_overlap_margin_grows_and_clips():
    plan = make_grid(SQUARE, 2, 2, 0.05, "overlap")
    assert bounds(plan.segment((0, 0)).fetch_bounds) == pytest.approx((0, 0, 2.1, 2.1))
    assert bounds(plan.segment((1, 1)).fetch_bounds) == pytest.approx((1.9, 1.9, 4, 4))


@pytest.mark.parametrize("mu", [-0.01, 0.25, 0.5, float("nan")])
def test_bad_margin(mu):
    with pytest.raises(InvalidMargin):
        make_grid(SQUARE, 2, 2, mu)


def test_bad_dims_and_mode():
    with pytest.raises(InvalidRegion):
        make_grid(SQUARE, 0, 2)
    with pytest.raises(InvalidRegion):
        make_grid(BoundingBox(GeoPoint(1, 1), GeoPoint(1, 1), point=True), 1, 1)
    with pytest.raises(InvalidMargin):
        make_grid(SQUARE, 1, 1, 0.01, "sideways")


def test_plan_json_is_serializable():
    obj = make_grid(SQUARE, 2, 3, 0.01).to_json()
    assert json.loads(json.dumps(obj))["segments"][5]["index"] == [1, 2]


@st.composite
def plans(draw, mode="inset"):
    lat0 = draw(st.floats(-80, 70))
    lon0 = draw(st.floats(-170, 160))
    h = draw(st.floats(0.01, 10))
    w = draw(st.floats(0.01, 10))
    region = BoundingBox.from_bounds(lat0, lon0, lat0 + h, lon0 + w)
    rows, cols = draw(st.integers(1, 6)), draw(st.integers(1, 6))
    mu = draw(st.floats(0.0, 0.249))
    return make_grid(region, rows, cols, mu, mode)


@given(plans())
def test_tiling_covers_region(plan):
    assert len(plan.segments) == plan.rows * plan.cols
    area = sum(s.bounds.height * s.bounds.width for s in plan)
    assert area == pytest.approx(plan.region.height * plan.region.width, rel=1e-9)
    assert min(s.bounds.min_lat for s in plan) == plan.region.min_lat
    assert max(s.bounds.max_lon for s in plan) == plan.region.max_lon
    for s in plan:
        r, c = s.index
        if c + 1 < plan.cols:
            assert s.bounds.max_lon == plan.segment((r, c + 1)).bounds.min_lon
        if r + 1 < plan.rows:
            assert s.bounds.max_lat == plan.segment((r + 1, c)).bounds.min_lat


@given(plans())
def test_inset_fetch_inside_bounds(plan):
    for s in plan:
        assert s.bounds.min_lat <= s.fetch_bounds.min_lat <= s.fetch_bounds.max_lat <= s.bounds.max_lat
        assert s.bounds.min_lon <= s.fetch_bounds.min_lon <= s.fetch_bounds.max_lon <= s.bounds.max_lon


@given(plans(), st.floats(0, 1), st.floats(0, 1))
def test_inset_fetch_areas_are_disjoint(plan, u, v):
    assume(plan.margin_fraction > 1e-6)
    p = GeoPoint(plan.region.min_lat + u * plan.region.height, plan.region.min_lon + v * plan.region.width)
    assert sum(box_contains(s.fetch_bounds, p) for s in plan) <= 1


@given(plans("overlap"), st.floats(0, 1), st.floats(0, 1))
def test_overlap_fetch_areas_cover_region(plan, u, v):
    p = GeoPoint(plan.region.min_lat + u * plan.region.height, plan.region.min_lon + v * plan.region.width)
    assert any(box_contains(s.fetch_bounds, p) for s in plan)


# weights


def test_uniform_density_gives_equal_weights():
    plan = update_weights(make_grid(SQUARE, 2, 2), dm([[3, 3], [3, 3]]), beta=0.0)
    assert set(plan.weights().ravel()) == {1.0}


def test_single_hot_cell():
    plan = update_weights(make_grid(SQUARE, 2, 2), dm([[0, 0], [0, 9]]), alpha=1, beta=0)
    np.testing.assert_array_equal(plan.weights(), [[0, 0], [0, 1]])
    assert [s.empty_rounds for s in plan] == [1, 1, 1, 0]


def test_density_plus_queries():
    plan = update_weights(make_grid(SQUARE, 2, 2), dm([[2, 0], [0, 4]]), dm([[4, 0], [0, 0]]), 1, 1)
    np.testing.assert_allclose(plan.weights(), [[1.5, 0], [0, 1]])


def test_all_zero_density_normalizes_to_zero():
    plan = update_weights(make_grid(SQUARE, 2, 2), dm([[0, 0], [0, 0]]))
    assert not plan.weights().any()


def test_empty_rounds_accumulate_and_reset():
    plan = make_grid(SQUARE, 1, 2)
    for _ in range(3):
        plan = update_weights(plan, dm([[1, 0]]))
    assert [s.empty_rounds for s in plan] == [0, 3]
    plan = update_weights(plan, dm([[0, 1]]))
    assert [s.empty_rounds for s in plan] == [1, 0]


def test_weight_dimension_checks():
    plan = make_grid(SQUARE, 2, 2)
    with pytest.raises(DimensionMismatch):
        update_weights(plan, dm([[1, 2, 3]]))
    with pytest.raises(DimensionMismatch):
        update_weights(plan, dm([[1, 1], [1, 1]]), dm([[1]]))
    with pytest.raises(ValueError):
        update_weights(plan, dm([[1, 1], [1, 1]]), alpha=0, beta=0)


# queue


def weighted(weights, empty=None):
    from dataclasses import replace

    plan = make_grid(BoundingBox.from_bounds(0, 0, 1, len(weights)), 1, len(weights))
    empty = empty or [0] * len(weights)
    segs = tuple(replace(s, weight=w, empty_rounds=e) for s, w, e in zip(plan.segments, weights, empty))
    return replace(plan, segments=segs)


A, B, C = (0, 0), (0, 1), (0, 2)


def test_equal_weights_row_major():
    plan = make_grid(SQUARE, 2, 2)
    assert build_queue(plan).entries == ((0, 0), (0, 1), (1, 0), (1, 1))


def test_multiplicity_and_pruning():
    assert build_queue(weighted([1.0, 0.5, 0.0], [0, 0, 3]), 0.0, 10).entries == (A, A, B)


def test_revisit_brings_pruned_segment_back_at_tail():
    assert build_queue(weighted([1.0, 0.5, 0.0], [0, 0, 10]), 0.0, 10).entries == (A, A, B, C)


def test_zero_weight_never_empty_is_kept():
    assert build_queue(weighted([1.0, 0.0], [0, 0])).entries == (A, B)


def test_max_multiplicity_caps():
    assert build_queue(weighted([1.0, 0.1]), max_multiplicity=3).entries == (A, A, A, B)


def test_queue_rejects_bad_revisit():
    with pytest.raises(ValueError):
        build_queue(weighted([1.0]), revisit_every=0)


weights_lists = st.lists(st.floats(0, 5), min_size=1, max_size=8)


@example([1.0, 2.225073858507e-311], [0] * 8)
@given(weights_lists, st.lists(st.integers(0, 30), min_size=8, max_size=8))
def test_queue_invariants(ws, empties):
    plan = weighted(ws, empties[: len(ws)])
    q = build_queue(plan, prune_threshold=-1.0)
    # pruning disabled: every segment appears
    assert {s.index for s in plan} <= set(q.entries)
    q2 = build_queue(plan, 0.0, 7)
    assert set(q2.entries) <= {s.index for s in plan}
    # repeats are consecutive and ordered by weight
    seen = []
    for e in q2.entries:
        if not seen or seen[-1] != e:
            assert e not in seen
            seen.append(e)
    ws_seen = [plan.segment(e).weight for e in seen]
    assert ws_seen == sorted(ws_seen, reverse=True)
    assert build_queue(plan, 0.0, 7) == q2


@given(st.lists(st.integers(0, 50), min_size=4, max_size=4), st.integers(0, 3), st.integers(1, 50))
def test_multiplicity_monotone_in_density(counts, cell, bump):
    plan = make_grid(SQUARE, 2, 2)
    before = update_weights(plan, dm(np.reshape(counts, (2, 2))), beta=0)
    raised = list(counts)
    raised[cell] += bump
    after = update_weights(plan, dm(np.reshape(raised, (2, 2))), beta=0)
    idx = divmod(cell, 2)
    assert build_queue(after).multiplicity(idx) >= build_queue(before).multiplicity(idx)

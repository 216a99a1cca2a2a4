import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seldgrid.errors import ClassMapMismatch, EmptyReference, RangeViolation
from seldgrid.label_codec import ClassMap, make_event
from seldgrid.metrics import (
    MetricConfig,
    compute_metrics,
    distance_matrix,
    match_events,
    seld_score,
    segment_breakdown,
    write_breakdown_csv,
)


def ev(frame, cls, az, el=0.0, src=0):
    return make_event(frame, cls, src, az, el)


def brute_force_cost(cost):
    """Minimum total cost over every maximal one-to-one assignment."""
    n_r, n_p = cost.shape
    best = np.inf
    if n_r <= n_p:
        for perm in itertools.permutations(range(n_p), n_r):
            best = min(best, sum(cost[i, perm[i]] for i in range(n_r)))
    else:
        for perm in itertools.permutations(range(n_r), n_p):
            best = min(best, sum(cost[perm[j], j] for j in range(n_p)))
    return best


def test_single_pair():
    res = match_events([ev(0, 1, 0)], [ev(0, 1, 10)])
    ((i, j, d),) = res.pairs
    assert (i, j) == (0, 0) and d == pytest.approx(10.0, abs=1e-12)


def test_optimal_not_crossing():
    ref = [ev(0, 1, 0), ev(0, 1, 90, src=1)]
    pred = [ev(0, 1, 85), ev(0, 1, 5, src=1)]
    res = match_events(ref, pred)
    assert sorted((i, j) for i, j, _ in res.pairs) == [(0, 1), (1, 0)]
    assert sum(d for *_, d in res.pairs) == pytest.approx(10.0, abs=1e-9)


def test_class_dependent():
    res = match_events([ev(0, 1, 0)], [ev(0, 2, 0)])
    assert res.pairs == [] and res.unmatched_ref == 1 and res.unmatched_pred == 1


def test_class_map_mismatch():
    with pytest.raises(ClassMapMismatch):
        match_events([ev(0, 5, 0)], [], classes=ClassMap.with_count(3))


def test_perfect_report():
    ref = [ev(t, c, 20 * c - 50, 10 * (t % 3)) for t in range(25) for c in range(3)]
    r = compute_metrics(ref, list(ref))
    assert (r.er20, r.f20, r.le_cd_deg, r.lr_cd, r.seld_score) == (0.0, 1.0, 0.0, 1.0, 0.0)


def test_pair_inside_threshold():
    r = compute_metrics([ev(0, 1, 0)], [ev(0, 1, 10)])
    assert (r.er20, r.f20, r.lr_cd) == (0.0, 1.0, 1.0)
    assert r.le_cd_deg == pytest.approx(10.0)
    assert r.seld_score == pytest.approx((10 / 180) / 4)


def test_pair_beyond_threshold_is_substitution():
    r = compute_metrics([ev(0, 1, 0)], [ev(0, 1, 30)])
    assert (r.er20, r.f20, r.lr_cd) == (1.0, 0.0, 1.0)
    assert r.le_cd_deg == pytest.approx(30.0)
    assert r.seld_score == pytest.approx((1 + 1 + 30 / 180) / 4)


def test_threshold_is_strict():
    r = compute_metrics([ev(0, 1, 0)], [ev(0, 1, 20)])
    assert r.tp == 0


def test_empty_prediction_report():
    r = compute_metrics([ev(0, 1, 0), ev(12, 2, 40)], [])
    assert (r.er20, r.f20, r.le_cd_deg, r.lr_cd) == (1.0, 0.0, 180.0, 0.0)
    assert r.seld_score == pytest.approx((1 + 1 + 1 + 1) / 4)


def test_empty_reference():
    with pytest.raises(EmptyReference):
        compute_metrics([], [ev(0, 1, 0)])


def test_segments_pool_frames():
    # a reference in frame 3 matches a prediction in frame 7 of the same 10-frame segment
    r = compute_metrics([ev(3, 0, 0)], [ev(7, 0, 5)])
    assert r.tp == 1
    r = compute_metrics([ev(3, 0, 0)], [ev(7, 0, 5)], MetricConfig(segment_frames=1))
    # now a deletion in one segment and an insertion in another
    assert r.tp == 0 and r.er20 == 2.0


def test_seld_score_fixtures_and_range():
    assert seld_score(0, 1, 0, 1) == 0.0
    assert seld_score(0.410, 0.386, 22.5, 0.595) == pytest.approx(0.389, abs=1e-3)
    assert seld_score(0.491, 0.366, 19.2, 0.521) == pytest.approx(0.428, abs=1e-3)
    with pytest.raises(RangeViolation):
        seld_score(0, 1.2, 0, 1)
    with pytest.raises(RangeViolation):
        seld_score(-0.1, 1, 0, 1)


@given(st.floats(0, 3), st.floats(0, 1), st.floats(0, 180), st.floats(0, 1), st.floats(0.001, 1))
def test_seld_score_affine(er, f, le, lr, step):
    base = seld_score(er, f, le, lr)
    assert seld_score(er + step, f, le, lr) - base == pytest.approx(step / 4, abs=1e-12)
    if f - step >= 0:
        assert seld_score(er, f - step, le, lr) - base == pytest.approx(step / 4, abs=1e-12)
    if le + step <= 180:
        assert seld_score(er, f, le + step, lr) - base == pytest.approx(step / 720, abs=1e-12)
    if lr - step >= 0:
        assert seld_score(er, f, le, lr - step) - base == pytest.approx(step / 4, abs=1e-12)


def random_group(rng, n_ref, n_pred, cls=0, seg_frame=0):
    def rnd(k):
        return [ev(seg_frame, cls, rng.uniform(-180, 180), np.degrees(np.arcsin(rng.uniform(-1, 1))), src=i)
                for i in range(k)]
    return rnd(n_ref), rnd(n_pred)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 4), st.integers(0, 4))
def test_assignment_matches_brute_force(seed, n_ref, n_pred):
    rng = np.random.default_rng(seed)
    ref, pred = random_group(rng, n_ref, n_pred)
    res = match_events(ref, pred)
    assert len(res.pairs) == min(n_ref, n_pred)
    assert len({i for i, _, _ in res.pairs}) == len(res.pairs)
    assert len({j for _, j, _ in res.pairs}) == len(res.pairs)
    if n_ref and n_pred:
        got = sum(d for *_, d in res.pairs)
        assert got == pytest.approx(brute_force_cost(distance_matrix(ref, pred)), abs=1e-9)


def test_greedy_can_be_suboptimal():
    ref = [ev(0, 0, 0), ev(0, 0, 40, src=1)]
    pred = [ev(0, 0, 20), ev(0, 0, 70, src=1)]
    opt = match_events(ref, pred)
    greedy = match_events(ref, pred, MetricConfig(greedy=True))
    assert sum(d for *_, d in greedy.pairs) >= sum(d for *_, d in opt.pairs)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_unmatchable_false_positive_is_monotone(seed):
    rng = np.random.default_rng(seed)
    ref = [ev(int(rng.integers(0, 30)), int(rng.integers(0, 3)), rng.uniform(-180, 180), src=i) for i in range(6)]
    pred = [ev(e.frame, e.class_id, e.azimuth + rng.normal(0, 15), src=e.source_id) for e in ref
            if rng.random() < 0.7]
    base = compute_metrics(ref, pred)
    # class 9 never appears in the reference, so the extra event cannot be matched
    extra = pred + [ev(int(rng.integers(0, 30)), 9, rng.uniform(-180, 180), src=99)]
    worse = compute_metrics(ref, extra)
    assert worse.er20 >= base.er20
    assert worse.f20 <= base.f20


def test_breakdown_rows_and_csv(tmp_path):
    cfg = MetricConfig()
    ref = [ev(0, 0, 0), ev(15, 1, 0)]
    pred = [ev(1, 0, 50), ev(15, 1, 2), ev(15, 1, 100, src=1)]
    rows = segment_breakdown(match_events(ref, pred, cfg), cfg)
    assert [r["segment"] for r in rows] == [0, 1]
    assert (rows[0]["S"], rows[0]["D"], rows[0]["I"]) == (1, 0, 0)
    assert (rows[1]["S"], rows[1]["D"], rows[1]["I"]) == (0, 0, 1)
    write_breakdown_csv(tmp_path / "b.csv", rows)
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0].startswith("segment,") and len(lines) == 3
    r = compute_metrics(ref, pred, cfg)
    assert r.er20 == pytest.approx(2 / 2)

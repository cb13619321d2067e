"""Event formation and event-level evaluation, with a max-matching oracle."""

import numpy as np
import pytest

from fewsed.episodes import SegmentGrid
from fewsed.errors import AlignmentMismatch
from fewsed.scoring import (
    EvalResult,
    PredictedEvent,
    aggregate,
    evaluate_events,
    f_measure,
    iou,
    match_events,
    read_predictions_csv,
    threshold_and_merge,
    write_predictions_csv,
    write_trace_csv,
)


def _probs(pos):
    pos = np.asarray(pos, dtype=np.float64)
    return np.stack([pos, 1.0 - pos], axis=1)


# ------------------------------------------------------------- event forming


def test_threshold_and_merge_basic():
    grid = SegmentGrid(starts=[0, 5, 10, 16, 20], seg_len=10)
    # segments 0 and 1 overlap in time; 3 stands alone past a one-frame gap
    events = threshold_and_merge(_probs([0.9, 0.8, 0.1, 0.7, 0.2]), grid, 10.0)
    assert len(events) == 2
    a, b = events
    assert (a.onset_s, a.offset_s) == (0.0, 0.15)
    assert a.score == pytest.approx((0.9 + 0.8) / 2.0)
    assert (b.onset_s, b.offset_s) == (pytest.approx(0.16), pytest.approx(0.26))
    assert b.score == pytest.approx(0.7)


def test_threshold_and_merge_touching_segments_fuse():
    # hop equals seg_len: intervals touch end-to-start and still merge
    grid = SegmentGrid(starts=[0, 10, 20], seg_len=10)
    events = threshold_and_merge(_probs([0.6, 0.6, 0.6]), grid, 10.0)
    assert len(events) == 1
    assert (events[0].onset_s, events[0].offset_s) == (0.0, 0.3)


def test_threshold_and_merge_offset_and_threshold():
    grid = SegmentGrid(starts=[0, 20], seg_len=10)
    events = threshold_and_merge(
        _probs([0.5, 0.49]), grid, 10.0, time_offset_s=2.0, threshold=0.5
    )
    # 0.5 passes (threshold is inclusive), 0.49 does not
    assert len(events) == 1
    assert events[0].onset_s == pytest.approx(2.0)
    assert events[0].offset_s == pytest.approx(2.1)


def test_threshold_and_merge_min_duration():
    grid = SegmentGrid(starts=[0, 50], seg_len=10)
    events = threshold_and_merge(
        _probs([0.9, 0.9]), grid, 10.0, min_duration_s=0.15
    )
    assert events == []
    events = threshold_and_merge(_probs([0.9, 0.9]), grid, 10.0, min_duration_s=0.05)
    assert len(events) == 2


def test_threshold_and_merge_alignment_error():
    grid = SegmentGrid(starts=[0, 5], seg_len=10)
    with pytest.raises(AlignmentMismatch):
        threshold_and_merge(_probs([0.9]), grid, 10.0)


def test_threshold_and_merge_empty():
    grid = SegmentGrid(starts=[0, 5], seg_len=10)
    assert threshold_and_merge(_probs([0.1, 0.2]), grid, 10.0) == []


# ---------------------------------------------------------------------- iou


def test_iou_values():
    a = PredictedEvent(0.0, 1.0, 1.0)
    assert iou(a, PredictedEvent(0.0, 1.0, 1.0)) == pytest.approx(1.0)
    assert iou(a, PredictedEvent(0.5, 1.5, 1.0)) == pytest.approx(0.5 / 1.5)
    assert iou(a, PredictedEvent(1.0, 2.0, 1.0)) == 0.0  # touching, no overlap
    assert iou(a, PredictedEvent(2.0, 3.0, 1.0)) == 0.0
    assert iou(a, PredictedEvent(0.25, 0.75, 1.0)) == pytest.approx(0.5)


# ------------------------------------------------------------------ matching


def _ev(pairs):
    return [PredictedEvent(a, b, 1.0) for a, b in pairs]


def test_match_events_hand_case():
    pred = _ev([(0.0, 1.0), (0.9, 2.0), (5.0, 6.0)])
    ref = _ev([(0.0, 1.1), (4.9, 6.1)])
    matches = match_events(pred, ref, min_iou=0.3)
    assert {(pi, ri) for pi, ri, _ in matches} == {(0, 0), (2, 1)}


def test_match_events_one_to_one():
    # two predictions overlap one reference; only the better one matches
    pred = _ev([(0.0, 1.0), (0.1, 1.1)])
    ref = _ev([(0.0, 1.0)])
    matches = match_events(pred, ref)
    assert len(matches) == 1
    assert matches[0][0] == 0
    assert matches[0][2] == pytest.approx(1.0)


def test_match_events_threshold():
    pred = _ev([(0.0, 0.3)])
    ref = _ev([(0.0, 1.0)])
    assert match_events(pred, ref, min_iou=0.3) == [(0, 0, pytest.approx(0.3))]
    assert match_events(pred, ref, min_iou=0.31) == []


def test_match_events_tie_prefers_earlier_reference():
    # one prediction equally overlaps two identical-iou references
    pred = _ev([(0.0, 2.0)])
    ref = _ev([(0.0, 1.0), (1.0, 2.0)])
    matches = match_events(pred, ref, min_iou=0.3)
    assert len(matches) == 1
    assert matches[0][1] == 0


def _max_matching_oracle(pred, ref, min_iou):
    """Maximum bipartite matching size by bitmask DP over references."""
    edges = [
        [pi for pi, p in enumerate(pred) if iou(p, r) >= min_iou] for r in ref
    ]
    best = 0
    n_p = len(pred)
    memo = {}

    def go(ri, used):
        if ri == len(ref):
            return 0
        key = (ri, used)
        if key in memo:
            return memo[key]
        out = go(ri + 1, used)
        for pi in edges[ri]:
            if not used & (1 << pi):
                out = max(out, 1 + go(ri + 1, used | (1 << pi)))
        memo[key] = out
        return out

    best = go(0, 0)
    del n_p
    return best


def test_greedy_matching_close_to_maximum():
    """Greedy never exceeds the optimum and almost always attains it."""
    rng = np.random.default_rng(13)
    equal = 0
    trials = 300
    for _ in range(trials):
        def rand_events(k):
            out = []
            for _ in range(k):
                on = rng.uniform(0.0, 8.0)
                out.append(PredictedEvent(on, on + rng.uniform(0.2, 2.0), 1.0))
            return out

        pred = rand_events(int(rng.integers(0, 6)))
        ref = rand_events(int(rng.integers(0, 6)))
        greedy = len(match_events(pred, ref, 0.3))
        best = _max_matching_oracle(pred, ref, 0.3)
        assert greedy <= best
        equal += greedy == best
    assert equal / trials >= 0.95


# ----------------------------------------------------------------- f-measure


def test_f_measure_values():
    r = f_measure(8, 2, 4)
    assert r.precision == pytest.approx(0.8)
    assert r.recall == pytest.approx(8 / 12)
    assert r.f_measure == pytest.approx(2 * 0.8 * (8 / 12) / (0.8 + 8 / 12))
    z = f_measure(0, 0, 0)
    assert (z.precision, z.recall, z.f_measure) == (0.0, 0.0, 0.0)
    assert f_measure(0, 5, 0).precision == 0.0
    assert f_measure(0, 0, 5).recall == 0.0


def test_evaluate_events_counts():
    pred = _ev([(0.0, 1.0), (3.0, 4.0), (7.0, 8.0)])
    ref = _ev([(0.0, 1.0), (3.1, 4.1), (10.0, 11.0)])
    r = evaluate_events(pred, ref, min_iou=0.3)
    assert (r.tp, r.fp, r.fn) == (2, 1, 1)


def test_aggregate_micro():
    per = {
        "a": f_measure(3, 1, 0),
        "b": f_measure(0, 2, 5),
    }
    overall, back = aggregate(per)
    assert (overall.tp, overall.fp, overall.fn) == (3, 3, 5)
    assert overall.precision == pytest.approx(0.5)
    assert back == per
    empty, _ = aggregate({})
    assert empty == EvalResult(0, 0, 0, 0.0, 0.0, 0.0)


# --------------------------------------------------------------------- files


def test_predictions_csv_roundtrip(tmp_path):
    events = [PredictedEvent(0.123456, 1.0, 0.875), PredictedEvent(2.5, 3.75, 0.5)]
    p = tmp_path / "pred.csv"
    write_predictions_csv(p, events)
    lines = p.read_text().splitlines()
    assert lines[0] == "onset_s,offset_s,score"
    back = read_predictions_csv(p)
    assert len(back) == 2
    assert back[0].onset_s == pytest.approx(0.123456, abs=1e-6)
    assert back[1].score == pytest.approx(0.5)


def test_predictions_csv_score_defaults_to_one(tmp_path):
    p = tmp_path / "ref.csv"
    p.write_text("onset_s,offset_s\n0.5,1.5\n\n2.0,3.0\n")
    back = read_predictions_csv(p)
    assert [e.score for e in back] == [1.0, 1.0]
    assert len(back) == 2  # blank line skipped


def test_predictions_csv_rejects_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("start,stop\n0,1\n")
    with pytest.raises(AlignmentMismatch):
        read_predictions_csv(p)


def test_trace_csv(tmp_path):
    grid = SegmentGrid(starts=[0, 10], seg_len=20)
    p = tmp_path / "trace.csv"
    write_trace_csv(p, _probs([0.25, 0.75]), grid, 10.0, time_offset_s=1.0)
    lines = p.read_text().splitlines()
    assert lines[0] == "time_s,p_positive"
    t0, v0 = lines[1].split(",")
    # segment 0 spans frames 0..20 -> center 0.1 s, offset by 1.0
    assert float(t0) == pytest.approx(1.1)
    assert float(v0) == pytest.approx(0.25)
    with pytest.raises(AlignmentMismatch):
        write_trace_csv(p, _probs([0.5]), grid, 10.0)

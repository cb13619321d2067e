"""Episode construction, segmentation planning, and support labeling."""

import json
from pathlib import Path

import numpy as np
import pytest

from fewsed.episodes import (
    Annotation,
    build_episode,
    event_frame_span,
    label_support_segments,
    load_episode_manifest,
    make_grid,
    overlap_frames,
    parse_annotations,
    plan_segments,
    segment_length_for,
)
from fewsed.errors import MalformedRow, NoPositives, TooShort, UnknownLabel


def seg_len_oracle(m):
    if m <= 20:
        return 20
    if m <= 100:
        return m
    if m <= 200:
        return m // 2
    if m <= 400:
        return m // 4
    return m // 8


def _write(tmp_path, text, name="a.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_parse_annotations_basic(tmp_path):
    p = _write(tmp_path, "onset_s,offset_s,label\n1.5,2.0,POS\n0.2,0.4,UNK\n0.5,0.9,POS\n")
    anns = parse_annotations(p)
    assert [a.label for a in anns] == ["UNK", "POS", "POS"]
    assert anns[0].onset_s == 0.2


def test_parse_annotations_rejects(tmp_path):
    with pytest.raises(MalformedRow):
        parse_annotations(_write(tmp_path, "onset,offset,label\n1,2,POS\n"))
    with pytest.raises(MalformedRow):
        parse_annotations(_write(tmp_path, "onset_s,offset_s,label\n1.0,POS\n"))
    with pytest.raises(MalformedRow):
        parse_annotations(_write(tmp_path, "onset_s,offset_s,label\nx,2.0,POS\n"))
    with pytest.raises(UnknownLabel):
        parse_annotations(_write(tmp_path, "onset_s,offset_s,label\n1.0,2.0,NEG\n"))


def test_build_episode_split():
    anns = [Annotation(float(i), float(i) + 0.5, "POS") for i in range(10)]
    anns.append(Annotation(3.2, 3.4, "UNK"))
    ep = build_episode("r", anns, 20.0, 5)
    assert len(ep.support_events) == 5
    assert ep.query_start_s == 4.5  # offset of the fifth event
    assert len(ep.query_events) == 5
    assert all(q.onset_s >= ep.query_start_s for q in ep.query_events)
    assert len(ep.unk_events) == 1
    assert ep.query_end_s == 20.0


def test_build_episode_errors():
    anns = [Annotation(float(i), float(i) + 0.5, "POS") for i in range(6)]
    with pytest.raises(TooShort):
        build_episode("r", anns, 4.5, 5)  # nothing after the support region
    with pytest.raises(NoPositives):
        build_episode("r", [Annotation(0.0, 1.0, "UNK")], 10.0, 5)


def test_segment_length_table_samples():
    for m in (1, 19, 20, 21, 55, 100, 101, 150, 200, 201, 399, 400, 401, 999, 2000):
        assert segment_length_for(m) == seg_len_oracle(m)


def test_plan_lower_median_and_rounding():
    # durations 0.3/0.5/0.7 s at 10 ms shift -> 30/50/70 frames, lower median 50
    events = [Annotation(0, 0.5, "POS"), Annotation(1, 1.7, "POS"), Annotation(3, 3.3, "POS")]
    plan = plan_segments(events, 10.0)
    assert plan.median_frames == 50
    assert plan.seg_len == 50
    assert plan.hop == max(1, 50 // 4)
    # even count takes the lower of the two middle values
    events = [Annotation(0, 0.2, "POS"), Annotation(1, 1.9, "POS")]
    assert plan_segments(events, 10.0).median_frames == 20
    # rounding to nearest frame count
    assert plan_segments([Annotation(0, 0.244, "POS")], 10.0).median_frames == 24
    assert plan_segments([Annotation(0, 0.246, "POS")], 10.0).median_frames == 25


def test_make_grid_tiling():
    plan = plan_segments([Annotation(0, 0.5, "POS")], 10.0)  # seg 50, hop 12
    grid = make_grid(300, plan)
    starts = list(grid.starts)
    assert starts[0] == 0 and starts == list(range(0, 251, 12))
    assert grid.bounds(0) == (0, 50)
    assert all(b <= 300 for _, b in (grid.bounds(i) for i in range(len(grid))))
    # span shorter than one segment still yields a single segment at 0
    small = make_grid(30, plan)
    assert len(small) == 1 and small.bounds(0) == (0, 50)


def test_event_frame_span():
    assert event_frame_span(Annotation(0.1, 0.3, "POS"), 10.0) == (10, 30)
    # a sliver never collapses to zero frames
    lo, hi = event_frame_span(Annotation(0.101, 0.102, "POS"), 10.0)
    assert hi - lo >= 1
    assert overlap_frames((0, 10), (5, 20)) == 5
    assert overlap_frames((0, 10), (10, 20)) == 0


def test_support_labeling_rule():
    plan = plan_segments([Annotation(0, 0.1, "POS")], 10.0)  # seg 20, hop 5
    grid = make_grid(100, plan)
    # event over frames [10, 30): segments with >= 10 overlapping frames are positive
    events = [Annotation(0.10, 0.30, "POS")]
    pos, neg = label_support_segments(grid, events, [], 10.0)
    for i in pos:
        a, b = grid.bounds(i)
        assert overlap_frames((a, b), (10, 30)) * 2 >= 20
    for i in neg:
        a, b = grid.bounds(i)
        assert overlap_frames((a, b), (10, 30)) == 0
    # an UNK region only blocks negatives
    unk = [Annotation(0.60, 0.80, "UNK")]
    pos2, neg2 = label_support_segments(grid, events, unk, 10.0)
    assert pos2 == pos
    for i in neg2:
        a, b = grid.bounds(i)
        assert overlap_frames((a, b), (60, 80)) == 0
    assert len(neg2) < len(neg)


def test_manifest_relative_paths(tmp_path):
    (tmp_path / "sub").mkdir()
    doc = {"seed": 1, "recordings": [
        {"recording": "r0", "wav_path": "sub/r0.wav", "csv_path": "sub/r0.csv",
         "n_shots": 5, "role": "test", "profile": "easy"}]}
    mp = tmp_path / "manifest.json"
    mp.write_text(json.dumps(doc))
    src = load_episode_manifest(mp)[0]
    assert src.recording == "r0"
    assert Path(src.wav_path) == tmp_path / "sub" / "r0.wav"
    assert src.role == "test" and src.profile == "easy"

"""Annotation parsing and the few-shot episode model.

An episode fixes the first few positive events of a recording as supervision
and treats everything after the last of them as the query region. Segment
length adapts to the median annotated event duration so that short-call and
long-call recordings get comparable time resolution relative to event scale.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import MalformedRow, NoPositives, TooShort, UnknownLabel

POSITIVE = "POS"
UNKNOWN = "UNK"
_LABELS = {POSITIVE, UNKNOWN}


@dataclass(frozen=True)
class Annotation:
    onset_s: float
    offset_s: float
    label: str


@dataclass
class Episode:
    recording: str
    support_events: list[Annotation]
    query_events: list[Annotation]
    unk_events: list[Annotation]
    query_start_s: float
    query_end_s: float
    n_shots: int


def parse_annotations(path) -> list[Annotation]:
    """Read an onset_s,offset_s,label CSV, sorted by onset (stable)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["onset_s", "offset_s", "label"]:
            raise MalformedRow(f"{path}: expected header onset_s,offset_s,label")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise MalformedRow(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                onset = float(row[0])
                offset = float(row[1])
            except ValueError as exc:
                raise MalformedRow(f"{path}:{lineno}: non-numeric time") from exc
            label = row[2].strip()
            if label not in _LABELS:
                raise UnknownLabel(f"{path}:{lineno}: label {label!r}")
            if onset < 0.0:
                raise MalformedRow(f"{path}:{lineno}: negative onset")
            if onset >= offset:
                raise MalformedRow(f"{path}:{lineno}: onset {onset} >= offset {offset}")
            rows.append(Annotation(onset, offset, label))
    rows.sort(key=lambda a: a.onset_s)
    return rows


def build_episode(recording: str, annotations: list[Annotation], duration_s: float, n_shots: int = 5) -> Episode:
    """Split annotations into support (first n_shots positives) and query.

    The query region runs from the offset of the last support event to the
    end of the recording; the remaining positives inside it are the held-out
    reference. Fewer positives than n_shots clips the shot count rather than
    failing. UNK events are kept for support labeling but never scored.
    """
    positives = [a for a in annotations if a.label == POSITIVE]
    if not positives:
        raise NoPositives(f"{recording}: no positive events")
    k = min(n_shots, len(positives))
    support = positives[:k]
    query_start = max(a.offset_s for a in support)
    if duration_s <= query_start:
        raise TooShort(f"{recording}: recording ends at {duration_s}s, before the query region")
    query = [a for a in positives[k:] if a.onset_s >= query_start]
    unk = [a for a in annotations if a.label == UNKNOWN]
    return Episode(recording, support, query, unk, query_start, duration_s, k)


@dataclass(frozen=True)
class SegmentPlan:
    seg_len: int
    hop: int
    median_frames: int


def _event_frames(a: Annotation, frame_shift_ms: float) -> int:
    # round-to-nearest frame count, at least 1
    return max(1, int((a.offset_s - a.onset_s) * 1000.0 / frame_shift_ms + 0.5))


def segment_length_for(median_frames: int) -> int:
    """Segment length in frames as a function of the median event length m."""
    m = median_frames
    if m <= 20:
        return 20
    if m <= 100:
        return m
    if m <= 200:
        return m // 2
    if m <= 400:
        return m // 4
    return m // 8


def plan_segments(support_events: list[Annotation], frame_shift_ms: float = 10.0) -> SegmentPlan:
    """Choose segment length and hop from the support events.

    m is the lower median of per-event frame counts (the 3rd order statistic
    of 5); hop is a quarter of the segment length, at least one frame.
    """
    if not support_events:
        raise NoPositives("cannot plan segmentation without support events")
    durations = sorted(_event_frames(a, frame_shift_ms) for a in support_events)
    m = durations[(len(durations) - 1) // 2]
    seg_len = segment_length_for(m)
    hop = max(1, seg_len // 4)
    return SegmentPlan(seg_len, hop, m)


@dataclass
class SegmentGrid:
    starts: list[int]
    seg_len: int

    def __len__(self) -> int:
        return len(self.starts)

    def bounds(self, i: int) -> tuple[int, int]:
        s = self.starts[i]
        return s, s + self.seg_len


def make_grid(span: int, plan: SegmentPlan) -> SegmentGrid:
    """Segments of seg_len frames at starts 0, hop, 2*hop, ... within span.

    A span shorter than one segment yields a single segment anchored at 0;
    its out-of-range frames are zero-padded downstream.
    """
    if span < 1:
        raise ValueError(f"empty frame span {span}")
    if span < plan.seg_len:
        return SegmentGrid([0], plan.seg_len)
    starts = list(range(0, span - plan.seg_len + 1, plan.hop))
    return SegmentGrid(starts, plan.seg_len)


def event_frame_span(a: Annotation, frame_shift_ms: float) -> tuple[int, int]:
    """Half-open frame interval covered by an event, at least one frame wide."""
    fps = 1000.0 / frame_shift_ms
    lo = int(a.onset_s * fps + 1e-9)
    hi = math.ceil(a.offset_s * fps - 1e-9)
    if hi <= lo:
        hi = lo + 1
    return lo, hi


def overlap_frames(seg: tuple[int, int], span: tuple[int, int]) -> int:
    return max(0, min(seg[1], span[1]) - max(seg[0], span[0]))


def label_support_segments(
    grid: SegmentGrid,
    support_events: list[Annotation],
    unk_events: list[Annotation],
    frame_shift_ms: float = 10.0,
) -> tuple[list[int], list[int]]:
    """Split support grid indices into (positive, negative) lists.

    A segment is positive when a single support event covers at least half of
    its frames; negative when no support or UNK event touches it at all.
    Everything in between is ambiguous and belongs to neither list.
    """
    pos_spans = [event_frame_span(a, frame_shift_ms) for a in support_events]
    unk_spans = [event_frame_span(a, frame_shift_ms) for a in unk_events]
    positives, negatives = [], []
    for i in range(len(grid)):
        seg = grid.bounds(i)
        best = max((overlap_frames(seg, sp) for sp in pos_spans), default=0)
        any_touch = best > 0 or any(overlap_frames(seg, sp) > 0 for sp in unk_spans)
        if 2 * best >= grid.seg_len:
            positives.append(i)
        elif not any_touch:
            negatives.append(i)
    return positives, negatives


@dataclass
class EpisodeSource:
    recording: str
    wav_path: Path
    csv_path: Path
    n_shots: int = 5
    role: str = "test"
    profile: str = ""


def load_episode_manifest(path) -> list[EpisodeSource]:
    """Read a JSON manifest listing recordings with wav and annotation paths.

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    doc = json.loads(path.read_text())
    entries = doc["recordings"] if isinstance(doc, dict) else doc
    base = path.parent
    out = []
    for e in entries:
        wav = Path(e["wav_path"])
        ann = Path(e["csv_path"])
        out.append(
            EpisodeSource(
                recording=e.get("recording", wav.stem),
                wav_path=wav if wav.is_absolute() else base / wav,
                csv_path=ann if ann.is_absolute() else base / ann,
                n_shots=int(e.get("n_shots", 5)),
                role=e.get("role", "test"),
                profile=e.get("profile", ""),
            )
        )
    return out

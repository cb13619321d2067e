"""From segment probabilities to scored events, and event-level evaluation.

Query segments whose positive probability reaches the threshold are turned
into time intervals; touching or overlapping intervals merge into one event
whose score is the mean probability of its member segments. Predictions are
matched to reference events one-to-one, greedily by descending interval IoU
with a minimum overlap requirement, and precision/recall/F aggregate by
pooling counts across tasks (micro-averaging).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .episodes import SegmentGrid
from .errors import AlignmentMismatch


@dataclass(frozen=True)
class PredictedEvent:
    onset_s: float
    offset_s: float
    score: float


def threshold_and_merge(
    probs: np.ndarray,
    grid: SegmentGrid,
    frame_shift_ms: float,
    time_offset_s: float = 0.0,
    threshold: float = 0.5,
    min_duration_s: float = 0.0,
) -> list[PredictedEvent]:
    """Detected events from per-segment class probabilities.

    probs rows align with grid segments; column 0 is the positive class.
    Segment times are offset by time_offset_s (the query region's start when
    the grid is query-relative).
    """
    probs = np.asarray(probs, dtype=np.float64)
    if len(probs) != len(grid):
        raise AlignmentMismatch(f"{len(probs)} probability rows vs {len(grid)} segments")
    shift_s = frame_shift_ms / 1000.0
    events: list[PredictedEvent] = []
    cur = None  # [onset, offset, list of member probs]
    for i in range(len(grid)):
        p = probs[i, 0]
        if p < threshold:
            continue
        start, stop = grid.bounds(i)
        onset = time_offset_s + start * shift_s
        offset = time_offset_s + stop * shift_s
        if cur is not None and onset <= cur[1]:
            cur[1] = max(cur[1], offset)
            cur[2].append(p)
        else:
            if cur is not None:
                events.append(PredictedEvent(cur[0], cur[1], float(np.mean(cur[2]))))
            cur = [onset, offset, [p]]
    if cur is not None:
        events.append(PredictedEvent(cur[0], cur[1], float(np.mean(cur[2]))))
    if min_duration_s > 0.0:
        events = [e for e in events if e.offset_s - e.onset_s >= min_duration_s]
    return events


def iou(a, b) -> float:
    """Intersection over union of two events' time intervals."""
    inter = min(a.offset_s, b.offset_s) - max(a.onset_s, b.onset_s)
    if inter <= 0.0:
        return 0.0
    union = max(a.offset_s, b.offset_s) - min(a.onset_s, b.onset_s)
    return inter / union


def match_events(predicted, reference, min_iou: float = 0.3) -> list[tuple[int, int, float]]:
    """Greedy one-to-one matching by descending IoU.

    Returns (pred_index, ref_index, iou) triples. Ties resolve by earlier
    reference onset, then earlier predicted onset, then indices, so the
    matching is deterministic.
    """
    pairs = []
    for ri, r in enumerate(reference):
        for pi, p in enumerate(predicted):
            v = iou(p, r)
            if v >= min_iou:
                pairs.append((pi, ri, v))
    pairs.sort(key=lambda t: (-t[2], reference[t[1]].onset_s, predicted[t[0]].onset_s, t[1], t[0]))
    used_pred, used_ref = set(), set()
    matches = []
    for pi, ri, v in pairs:
        if pi in used_pred or ri in used_ref:
            continue
        used_pred.add(pi)
        used_ref.add(ri)
        matches.append((pi, ri, v))
    return matches


@dataclass(frozen=True)
class EvalResult:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f_measure: float


def f_measure(tp: int, fp: int, fn: int) -> EvalResult:
    """Precision, recall, and F1 from match counts; empty denominators give 0."""
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f = 2.0 * precision * recall / (precision + recall) if precision + recall > 0.0 else 0.0
    return EvalResult(tp, fp, fn, precision, recall, f)


def evaluate_events(predicted, reference, min_iou: float = 0.3) -> EvalResult:
    matches = match_events(predicted, reference, min_iou)
    tp = len(matches)
    return f_measure(tp, len(predicted) - tp, len(reference) - tp)


def aggregate(per_task: dict[str, EvalResult]) -> tuple[EvalResult, dict[str, EvalResult]]:
    """Micro-averaged result over tasks: counts pool before the ratios."""
    tp = sum(r.tp for r in per_task.values())
    fp = sum(r.fp for r in per_task.values())
    fn = sum(r.fn for r in per_task.values())
    return f_measure(tp, fp, fn), dict(per_task)


def write_predictions_csv(path, events: list[PredictedEvent]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["onset_s", "offset_s", "score"])
        for e in events:
            w.writerow([f"{e.onset_s:.6f}", f"{e.offset_s:.6f}", f"{e.score:.6f}"])


def read_predictions_csv(path) -> list[PredictedEvent]:
    events = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:2]] != ["onset_s", "offset_s"]:
            raise AlignmentMismatch(f"{path}: expected onset_s,offset_s[,score] header")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            score = float(row[2]) if len(row) > 2 else 1.0
            events.append(PredictedEvent(float(row[0]), float(row[1]), score))
    return events


def write_trace_csv(path, probs: np.ndarray, grid: SegmentGrid, frame_shift_ms: float, time_offset_s: float = 0.0) -> None:
    """Per-segment positive probability against segment center time."""
    probs = np.asarray(probs, dtype=np.float64)
    if len(probs) != len(grid):
        raise AlignmentMismatch(f"{len(probs)} probability rows vs {len(grid)} segments")
    shift_s = frame_shift_ms / 1000.0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "p_positive"])
        for i in range(len(grid)):
            start, stop = grid.bounds(i)
            center = time_offset_s + 0.5 * (start + stop) * shift_s
            w.writerow([f"{center:.6f}", f"{probs[i, 0]:.6f}"])

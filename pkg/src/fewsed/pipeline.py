"""End-to-end detection pipeline and benchmark runner.

One episode runs as: resample, PCEN features, segmentation planning from the
support events, support segment labeling, embedding, initial prototype
classifier, support fine-tuning of a trainable embedder, optional negative
re-selection from the query region, optional teacher-student adaptation,
thresholding into events, and event-level scoring against the query-region
reference. The classifier chain is tagged W0 (initial), W1 (after
fine-tuning), W2 (after negative selection), adapted (after teacher-student
updates); disabled stages pass their input through so the chain always
reflects exactly the enabled flags. Each stage is tracked so failures
surface as a stage-tagged error instead of a bare traceback from deep
inside numpy.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adaptation import AdaptiveConfig, AdaptStep, adapt_student
from .embedders import (
    EmbedderSpec,
    LabeledFeatures,
    embed,
    finetune_on_support,
    l2_normalize,
    pretrain_embedder,
    segment_stats,
    specs_equal,
)
from .episodes import (
    POSITIVE,
    UNKNOWN,
    Annotation,
    Episode,
    SegmentGrid,
    SegmentPlan,
    build_episode,
    event_frame_span,
    label_support_segments,
    load_episode_manifest,
    make_grid,
    overlap_frames,
    parse_annotations,
    plan_segments,
)
from .errors import ConfigError, EmptyCorpus, FewsedError, PipelineStageError, TooShort
from .frontend import FrontendConfig, PcenGram, PcenParams, Waveform, load_wav, mel_pcen, resample
from .prototypes import (
    ClassifierWeights,
    SelectionResult,
    build_prototypes,
    predict_probs,
    rebuild_classifier,
    select_negatives,
)
from .scoring import (
    EvalResult,
    PredictedEvent,
    f_measure,
    match_events,
    threshold_and_merge,
)


@dataclass(frozen=True)
class EvalConfig:
    prob_threshold: float = 0.5
    iou_threshold: float = 0.3
    min_duration_s: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.prob_threshold < 1.0):
            raise ValueError("prob_threshold must be in (0, 1)")
        if not (0.0 < self.iou_threshold < 1.0):
            raise ValueError("iou_threshold must be in (0, 1)")


@dataclass
class PipelineConfig:
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    student: EmbedderSpec = field(default_factory=lambda: EmbedderSpec(kind="pooled", dim=64, seed=0, subwindows=4))
    teacher: EmbedderSpec = field(
        default_factory=lambda: EmbedderSpec(kind="pooled", dim=64, seed=1, subwindows=1, context=0.5)
    )
    adaptive: AdaptiveConfig = field(default_factory=AdaptiveConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    negative_source: str = "support_background"
    use_nss: bool = False
    use_al: bool = False
    teacher_use_nss: bool = False
    pretrain_epochs: int = 0
    pretrain_lr: float = 1e-4
    finetune_steps: int = 20
    finetune_lr: float = 1e-5
    min_selected: int = 5
    random_negative_factor: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.negative_source not in ("support_background", "random_query"):
            raise ConfigError(
                f"negative_source must be support_background or random_query, got {self.negative_source!r}"
            )
        if self.use_al and specs_equal(self.student, self.teacher):
            raise ConfigError("adaptation needs a teacher embedder distinct from the student")
        if self.min_selected < 1:
            raise ConfigError("min_selected must be positive")
        if self.random_negative_factor < 1:
            raise ConfigError("random_negative_factor must be positive")
        if self.pretrain_epochs < 0 or self.finetune_steps < 0:
            raise ConfigError("training step counts must be nonnegative")


def _spec_to_dict(spec: EmbedderSpec) -> dict:
    d = {
        "kind": spec.kind,
        "dim": spec.dim,
        "seed": spec.seed,
        "subwindows": spec.subwindows,
        "context": spec.context,
        "path": spec.path,
    }
    if spec.params is not None:
        d["params"] = {k: v.tolist() for k, v in spec.params.items()}
    else:
        d["params"] = None
    return d


def _spec_from_dict(d: dict) -> EmbedderSpec:
    d = dict(d)
    params = d.pop("params", None)
    if params is not None:
        params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    allowed = {"kind", "dim", "seed", "subwindows", "context", "path"}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown embedder keys: {sorted(unknown)}")
    return EmbedderSpec(params=params, **d)


def _sub_from_dict(cls, d: dict, label: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown {label} keys: {sorted(unknown)}")
    try:
        return cls(**d)
    except ValueError as exc:
        raise ConfigError(f"{label}: {exc}") from exc


def config_to_dict(cfg: PipelineConfig) -> dict:
    return {
        "frontend": dataclasses.asdict(cfg.frontend),
        "student": _spec_to_dict(cfg.student),
        "teacher": _spec_to_dict(cfg.teacher),
        "adaptive": dataclasses.asdict(cfg.adaptive),
        "eval": dataclasses.asdict(cfg.eval),
        "negative_source": cfg.negative_source,
        "use_nss": cfg.use_nss,
        "use_al": cfg.use_al,
        "teacher_use_nss": cfg.teacher_use_nss,
        "pretrain_epochs": cfg.pretrain_epochs,
        "pretrain_lr": cfg.pretrain_lr,
        "finetune_steps": cfg.finetune_steps,
        "finetune_lr": cfg.finetune_lr,
        "min_selected": cfg.min_selected,
        "random_negative_factor": cfg.random_negative_factor,
        "seed": cfg.seed,
    }


def config_from_dict(doc: dict) -> PipelineConfig:
    doc = dict(doc)
    kwargs = {}
    if "frontend" in doc:
        fe = dict(doc.pop("frontend"))
        pcen = fe.pop("pcen", None)
        if pcen is not None:
            fe["pcen"] = _sub_from_dict(PcenParams, pcen, "pcen")
        kwargs["frontend"] = _sub_from_dict(FrontendConfig, fe, "frontend")
    if "student" in doc:
        kwargs["student"] = _spec_from_dict(doc.pop("student"))
    if "teacher" in doc:
        kwargs["teacher"] = _spec_from_dict(doc.pop("teacher"))
    if "adaptive" in doc:
        kwargs["adaptive"] = _sub_from_dict(AdaptiveConfig, doc.pop("adaptive"), "adaptive")
    if "eval" in doc:
        kwargs["eval"] = _sub_from_dict(EvalConfig, doc.pop("eval"), "eval")
    scalar_names = {
        "negative_source",
        "use_nss",
        "use_al",
        "teacher_use_nss",
        "pretrain_epochs",
        "pretrain_lr",
        "finetune_steps",
        "finetune_lr",
        "min_selected",
        "random_negative_factor",
        "seed",
    }
    unknown = set(doc) - scalar_names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs.update(doc)
    try:
        return PipelineConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def save_config(path, cfg: PipelineConfig) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), sort_keys=True, indent=2) + "\n")


def load_config(path) -> PipelineConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(doc)


@dataclass
class SupportSummary:
    n_positive: int
    n_negative: int
    fallback_positive: bool
    fallback_negative: bool


@dataclass
class EpisodeResult:
    recording: str
    events: list[PredictedEvent]
    probs: np.ndarray
    query_grid: SegmentGrid
    query_offset_s: float
    plan: SegmentPlan
    support: SupportSummary
    w_initial: ClassifierWeights
    w_tuned: ClassifierWeights
    w_selected: ClassifierWeights
    w_final: ClassifierWeights
    chain: list[str]
    selection: SelectionResult | None
    adapt_steps: list[AdaptStep]
    matches: list[tuple[int, int, float]]
    eval: EvalResult
    reference: list[Annotation]
    timings: dict[str, float]


def _support_labels_with_fallback(
    grid: SegmentGrid,
    support_events: list[Annotation],
    unk_events: list[Annotation],
    shift_ms: float,
) -> tuple[list[int], list[int], bool, bool]:
    """Support labeling plus recovery when a class comes back empty.

    No positives: events shorter than half a segment can never satisfy the
    coverage rule, so fall back to each event's best-overlap segment. No
    negatives: take the least-contaminated segments instead.
    """
    positives, negatives = label_support_segments(grid, support_events, unk_events, shift_ms)
    fb_pos = not positives
    if fb_pos:
        chosen = set()
        for a in support_events:
            span = event_frame_span(a, shift_ms)
            overlaps = [overlap_frames(grid.bounds(i), span) for i in range(len(grid))]
            best = max(range(len(grid)), key=lambda i: (overlaps[i], -i))
            if overlaps[best] > 0:
                chosen.add(best)
        positives = sorted(chosen)
    fb_neg = not negatives
    if fb_neg:
        spans = [event_frame_span(a, shift_ms) for a in support_events + unk_events]
        pos_set = set(positives)
        contamination = []
        for i in range(len(grid)):
            if i in pos_set:
                continue
            total = sum(overlap_frames(grid.bounds(i), sp) for sp in spans)
            contamination.append((total, i))
        contamination.sort()
        k = max(1, len(positives))
        negatives = sorted(i for _, i in contamination[:k])
    if not positives or not negatives:
        raise TooShort("support region too small to label both classes")
    return positives, negatives, fb_pos, fb_neg


def run_episode(waveform: Waveform, episode: Episode, cfg: PipelineConfig) -> EpisodeResult:
    timings: dict[str, float] = {}
    stage = "resample"
    try:
        t0 = time.perf_counter()
        wav = resample(waveform, cfg.frontend.target_rate)
        timings[stage] = time.perf_counter() - t0

        stage = "features"
        t0 = time.perf_counter()
        gram = mel_pcen(wav, cfg.frontend)
        timings[stage] = time.perf_counter() - t0

        stage = "plan"
        t0 = time.perf_counter()
        shift_ms = cfg.frontend.frame_shift_ms
        fps = 1000.0 / shift_ms
        plan = plan_segments(episode.support_events, shift_ms)
        n_frames = gram.n_frames
        q0 = max(1, int(np.ceil(episode.query_start_s * fps - 1e-9)))
        if q0 >= n_frames:
            raise TooShort("no frames remain after the support region")
        query_offset_s = q0 / fps
        timings[stage] = time.perf_counter() - t0

        stage = "support"
        t0 = time.perf_counter()
        support_gram = PcenGram(gram.values[:q0], shift_ms)
        query_gram = PcenGram(gram.values[q0:], shift_ms)
        support_grid = make_grid(q0, plan)
        query_grid = make_grid(n_frames - q0, plan)
        pos_idx, neg_idx, fb_pos, fb_neg = _support_labels_with_fallback(
            support_grid, episode.support_events, episode.unk_events, shift_ms
        )
        summary = SupportSummary(len(pos_idx), len(neg_idx), fb_pos, fb_neg)
        timings[stage] = time.perf_counter() - t0

        stage = "embed"
        t0 = time.perf_counter()
        sup_emb = l2_normalize(embed(cfg.student, support_gram, support_grid, role="support"))
        qry_emb = l2_normalize(embed(cfg.student, query_gram, query_grid, role="query"))
        timings[stage] = time.perf_counter() - t0

        stage = "classifier"
        t0 = time.perf_counter()
        if cfg.negative_source == "random_query":
            rng = np.random.default_rng([cfg.seed, 17])
            n_take = min(cfg.random_negative_factor * len(pos_idx), len(query_grid))
            sampled = np.sort(rng.choice(len(query_grid), size=n_take, replace=False))
        else:
            sampled = None

        def classifier_from(sup, qry, provenance):
            pos = sup[pos_idx]
            neg = qry[sampled] if sampled is not None else sup[neg_idx]
            return build_prototypes(pos, neg, provenance=provenance), pos, neg

        w_initial, _, _ = classifier_from(sup_emb, qry_emb, "W0")
        chain = ["W0"]
        timings[stage] = time.perf_counter() - t0

        stage = "finetune"
        t0 = time.perf_counter()
        student = cfg.student
        if student.kind == "trainable" and cfg.finetune_steps > 0:
            feats = segment_stats(support_gram, support_grid, student.subwindows, student.context)
            labeled = pos_idx + neg_idx
            labels = np.array([0] * len(pos_idx) + [1] * len(neg_idx))
            student = finetune_on_support(
                student, feats[labeled], labels, cfg.finetune_steps, cfg.finetune_lr, cfg.seed
            )
        if student is not cfg.student:
            sup_emb = l2_normalize(embed(student, support_gram, support_grid, role="support"))
            qry_emb = l2_normalize(embed(student, query_gram, query_grid, role="query"))
        w_tuned, pos_emb, neg_emb = classifier_from(sup_emb, qry_emb, "W1")
        chain.append("W1")
        timings[stage] = time.perf_counter() - t0

        stage = "negative_selection"
        t0 = time.perf_counter()
        selection = None
        if cfg.use_nss:
            selection = select_negatives(
                w_tuned, qry_emb, len(pos_emb), len(neg_emb), cfg.min_selected
            )
            w_selected = rebuild_classifier(pos_emb, neg_emb, qry_emb[list(selection.selected)])
            chain.append("W2")
        else:
            w_selected = w_tuned
        timings[stage] = time.perf_counter() - t0

        stage = "adaptation"
        t0 = time.perf_counter()
        adapt_steps: list[AdaptStep] = []
        w_final = w_selected
        if cfg.use_al:
            te_sup = l2_normalize(embed(cfg.teacher, support_gram, support_grid, role="teacher_support"))
            te_qry = l2_normalize(embed(cfg.teacher, query_gram, query_grid, role="teacher_query"))
            te_neg = te_qry[sampled] if sampled is not None else te_sup[neg_idx]
            w_teacher = build_prototypes(te_sup[pos_idx], te_neg, provenance="W1")
            if cfg.teacher_use_nss:
                te_sel = select_negatives(w_teacher, te_qry, len(pos_idx), len(te_neg), cfg.min_selected)
                w_teacher = rebuild_classifier(te_sup[pos_idx], te_neg, te_qry[list(te_sel.selected)])
            p_teacher = predict_probs(w_teacher, te_qry)
            w_final, adapt_steps = adapt_student(
                w_selected, qry_emb, p_teacher, plan.seg_len, cfg.adaptive
            )
            chain.append("adapted")
        timings[stage] = time.perf_counter() - t0

        stage = "predict"
        t0 = time.perf_counter()
        probs = predict_probs(w_final, qry_emb)
        events = threshold_and_merge(
            probs,
            query_grid,
            shift_ms,
            time_offset_s=query_offset_s,
            threshold=cfg.eval.prob_threshold,
            min_duration_s=cfg.eval.min_duration_s,
        )
        events = [e for e in events if e.onset_s >= query_offset_s - 1e-9]
        timings[stage] = time.perf_counter() - t0

        stage = "score"
        t0 = time.perf_counter()
        matches = match_events(events, episode.query_events, cfg.eval.iou_threshold)
        tp = len(matches)
        result = f_measure(tp, len(events) - tp, len(episode.query_events) - tp)
        timings[stage] = time.perf_counter() - t0
    except FewsedError as exc:
        raise PipelineStageError(stage, exc) from exc

    return EpisodeResult(
        recording=episode.recording,
        events=events,
        probs=probs,
        query_grid=query_grid,
        query_offset_s=query_offset_s,
        plan=plan,
        support=summary,
        w_initial=w_initial,
        w_tuned=w_tuned,
        w_selected=w_selected,
        w_final=w_final,
        chain=chain,
        selection=selection,
        adapt_steps=adapt_steps,
        matches=matches,
        eval=result,
        reference=list(episode.query_events),
        timings=timings,
    )


def run_recording(wav_path, csv_path, cfg: PipelineConfig, n_shots: int = 5) -> EpisodeResult:
    waveform = load_wav(wav_path)
    annotations = parse_annotations(csv_path)
    episode = build_episode(Path(wav_path).stem, annotations, waveform.duration_seconds, n_shots)
    return run_episode(waveform, episode, cfg)


def episode_report(result: EpisodeResult, cfg: PipelineConfig) -> dict:
    """JSON-ready episode summary. Timings stay out so reruns diff clean."""
    doc = {
        "recording": result.recording,
        "query_offset_s": result.query_offset_s,
        "segmentation": {
            "seg_len": result.plan.seg_len,
            "hop": result.plan.hop,
            "median_frames": result.plan.median_frames,
        },
        "support": {
            "n_positive": result.support.n_positive,
            "n_negative": result.support.n_negative,
            "fallback_positive": result.support.fallback_positive,
            "fallback_negative": result.support.fallback_negative,
        },
        "classifier_chain": result.chain,
        "n_events": len(result.events),
        "events": [
            {"onset_s": e.onset_s, "offset_s": e.offset_s, "score": e.score} for e in result.events
        ],
        "matches": [
            {"pred": p, "ref": r, "iou": v} for p, r, v in result.matches
        ],
        "eval": dataclasses.asdict(result.eval),
        "config": config_to_dict(cfg),
    }
    if result.selection is not None:
        doc["negative_selection"] = {
            "selected": list(result.selection.selected),
            "candidate_count": result.selection.candidate_count,
            "lower": result.selection.lower,
            "upper": result.selection.upper,
        }
    if result.adapt_steps:
        doc["adaptation"] = {
            "steps": len(result.adapt_steps),
            "first_total": result.adapt_steps[0].breakdown.total,
            "last_total": result.adapt_steps[-1].breakdown.total,
            "last_disagreements": result.adapt_steps[-1].disagreements,
        }
    return doc


def collect_labeled_features(
    gram: PcenGram, annotations: list[Annotation], spec: EmbedderSpec, shift_ms: float
) -> LabeledFeatures:
    """Segment features + labels from a fully annotated recording.

    The recording's own median event duration drives its segment plan, so
    recordings with different call lengths contribute comparably scaled
    segments; the pooled feature size is independent of segment length.
    """
    events = [a for a in annotations if a.label == POSITIVE]
    unk = [a for a in annotations if a.label == UNKNOWN]
    plan = plan_segments(events, shift_ms)
    grid = make_grid(gram.n_frames, plan)
    pos_idx, neg_idx = label_support_segments(grid, events, unk, shift_ms)
    feats = segment_stats(gram, grid, spec.subwindows, spec.context)
    x = feats[pos_idx + neg_idx]
    y = np.array([0] * len(pos_idx) + [1] * len(neg_idx))
    return LabeledFeatures(x, y)


def pretrain_from_manifest(
    manifest_path,
    spec: EmbedderSpec,
    frontend_cfg: FrontendConfig,
    epochs: int,
    lr: float = 1e-4,
    batch_size: int = 32,
    seed: int = 0,
) -> tuple[EmbedderSpec, list[float]]:
    """Pretrain a trainable embedder on the manifest's train recordings."""
    sources = [s for s in load_episode_manifest(manifest_path) if s.role == "train"]
    if not sources:
        raise EmptyCorpus(f"{manifest_path}: no train recordings to pretrain on")
    xs, ys = [], []
    for src in sources:
        wav = resample(load_wav(src.wav_path), frontend_cfg.target_rate)
        gram = mel_pcen(wav, frontend_cfg)
        data = collect_labeled_features(
            gram, parse_annotations(src.csv_path), spec, frontend_cfg.frame_shift_ms
        )
        xs.append(data.x)
        ys.append(data.y)
    merged = LabeledFeatures(np.vstack(xs), np.concatenate(ys))
    return pretrain_embedder(merged, spec, epochs, lr, batch_size, seed)


@dataclass
class ConfigOutcome:
    label: str
    overall: EvalResult
    per_recording: dict[str, EvalResult]
    per_profile: dict[str, EvalResult]
    failures: list[dict]


@dataclass
class BenchmarkReport:
    manifest: str
    outcomes: list[ConfigOutcome]

    @property
    def n_failures(self) -> int:
        return sum(len(o.failures) for o in self.outcomes)


def _micro(results: list[EvalResult]) -> EvalResult:
    return f_measure(
        sum(r.tp for r in results), sum(r.fp for r in results), sum(r.fn for r in results)
    )


def run_benchmark(manifest_path, configs: list[PipelineConfig], labels: list[str]) -> BenchmarkReport:
    """Run every config over every test recording in the manifest.

    Waveforms and annotations load once and are shared across configs. A
    trainable student with pretrain_epochs set is pretrained on the
    manifest's train recordings before its episodes run. A failing episode
    is recorded with its stage and skipped; the run continues.
    """
    if len(configs) != len(labels):
        raise ConfigError("one label per config required")
    all_sources = load_episode_manifest(manifest_path)
    sources = [s for s in all_sources if s.role != "train"]
    if not sources:
        raise EmptyCorpus(f"{manifest_path}: no test recordings")

    cache = []
    for src in sources:
        waveform = load_wav(src.wav_path)
        annotations = parse_annotations(src.csv_path)
        episode = build_episode(src.recording, annotations, waveform.duration_seconds, src.n_shots)
        cache.append((src, waveform, episode))

    outcomes = []
    for label, cfg in zip(labels, configs):
        if cfg.student.kind == "trainable" and cfg.pretrain_epochs > 0 and cfg.student.params is None:
            trained, _ = pretrain_from_manifest(
                manifest_path, cfg.student, cfg.frontend, cfg.pretrain_epochs, cfg.pretrain_lr, seed=cfg.seed
            )
            cfg = dataclasses.replace(cfg, student=trained)
        per: dict[str, EvalResult] = {}
        profile_of: dict[str, str] = {}
        failures: list[dict] = []
        for src, waveform, episode in cache:
            try:
                res = run_episode(waveform, episode, cfg)
            except PipelineStageError as exc:
                failures.append({"recording": src.recording, "stage": exc.stage, "error": str(exc.cause)})
                continue
            per[src.recording] = res.eval
            profile_of[src.recording] = src.profile or "default"
        prof_names = sorted(set(profile_of.values()))
        per_profile = {
            p: _micro([per[r] for r in per if profile_of[r] == p]) for p in prof_names
        }
        outcomes.append(ConfigOutcome(label, _micro(list(per.values())), per, per_profile, failures))
    return BenchmarkReport(str(manifest_path), outcomes)


def benchmark_report_dict(report: BenchmarkReport, configs: list[PipelineConfig]) -> dict:
    return {
        "manifest": report.manifest,
        "configs": [
            {
                "label": o.label,
                "overall": dataclasses.asdict(o.overall),
                "per_profile": {k: dataclasses.asdict(v) for k, v in o.per_profile.items()},
                "per_recording": {k: dataclasses.asdict(v) for k, v in o.per_recording.items()},
                "failures": o.failures,
                "config": config_to_dict(cfg),
            }
            for o, cfg in zip(report.outcomes, configs)
        ],
    }


def write_comparison_csv(path, report: BenchmarkReport) -> None:
    lines = ["label,precision,recall,f_measure,tp,fp,fn,n_recordings,failures"]
    for o in report.outcomes:
        r = o.overall
        lines.append(
            f"{o.label},{r.precision:.6f},{r.recall:.6f},{r.f_measure:.6f},"
            f"{r.tp},{r.fp},{r.fn},{len(o.per_recording)},{len(o.failures)}"
        )
    Path(path).write_text("\n".join(lines) + "\n")

"""Command line front end.

Subcommands:

  detect  run one recording, write events + diagnostics + a figure
  bench   run one or more configs over a corpus manifest and compare
  synth   generate a synthetic corpus from a named profile
  eval    score a predictions file against a reference annotation file
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .adaptation import write_steps_jsonl
from .episodes import POSITIVE, parse_annotations
from .errors import FewsedError
from .pipeline import (
    PipelineConfig,
    benchmark_report_dict,
    episode_report,
    load_config,
    run_benchmark,
    run_recording,
    write_comparison_csv,
)
from .plots import save_benchmark_figure, save_episode_figure
from .prototypes import save_classifier
from .scoring import (
    evaluate_events,
    read_predictions_csv,
    write_predictions_csv,
    write_trace_csv,
)
from .synth import PROFILES, generate_corpus


def _cmd_detect(args) -> int:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = run_recording(args.wav, args.csv, cfg, n_shots=args.n_shots)

    write_predictions_csv(out_dir / "predictions.csv", result.events)
    write_trace_csv(
        out_dir / "trace.csv",
        result.probs,
        result.query_grid,
        cfg.frontend.frame_shift_ms,
        result.query_offset_s,
    )
    save_classifier(out_dir / "classifier.json", result.w_final)
    if result.adapt_steps:
        write_steps_jsonl(out_dir / "steps.jsonl", result.adapt_steps)
    report = episode_report(result, cfg)
    (out_dir / "report.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    if not args.no_figures:
        save_episode_figure(
            out_dir / "episode.png", result, cfg.frontend.frame_shift_ms, cfg.eval.prob_threshold
        )
    e = result.eval
    print(
        f"{result.recording}: {len(result.events)} events, "
        f"P={e.precision:.3f} R={e.recall:.3f} F={e.f_measure:.3f}"
    )
    return 0


def _cmd_bench(args) -> int:
    configs = [load_config(p) for p in args.config] if args.config else [PipelineConfig()]
    if args.label:
        if len(args.label) != len(configs):
            print("error: need one --label per --config", file=sys.stderr)
            return 2
        labels = list(args.label)
    else:
        labels = [Path(p).stem for p in args.config] if args.config else ["default"]
    seen: dict[str, int] = {}
    for i, lbl in enumerate(labels):
        if lbl in seen:
            labels[i] = f"{lbl}_{i}"
        seen[lbl] = i

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = run_benchmark(args.manifest, configs, labels)
    doc = benchmark_report_dict(report, configs)
    (out_dir / "report.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    write_comparison_csv(out_dir / "comparison.csv", report)
    if not args.no_figures:
        save_benchmark_figure(out_dir / "benchmark.png", report)
    for o in report.outcomes:
        r = o.overall
        print(
            f"{o.label}: P={r.precision:.3f} R={r.recall:.3f} F={r.f_measure:.3f} "
            f"({len(o.per_recording)} recordings, {len(o.failures)} failed)"
        )
    return 1 if report.n_failures else 0


def _cmd_synth(args) -> int:
    if args.profile not in PROFILES:
        print(f"error: unknown profile {args.profile!r}; choices: {sorted(PROFILES)}", file=sys.stderr)
        return 2
    manifest = generate_corpus(
        PROFILES[args.profile], args.train, args.count, args.seed, args.out_dir
    )
    print(manifest)
    return 0


def _cmd_eval(args) -> int:
    predicted = read_predictions_csv(args.pred)
    reference = [a for a in parse_annotations(args.ref) if a.label == POSITIVE]
    r = evaluate_events(predicted, reference, args.min_iou)
    print(
        f"P={r.precision:.4f} R={r.recall:.4f} F={r.f_measure:.4f} "
        f"(tp={r.tp} fp={r.fp} fn={r.fn})"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fewsed", description="Few-shot sound event detection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="detect events in one recording")
    p.add_argument("--wav", required=True, help="input recording")
    p.add_argument("--csv", required=True, help="annotation file with the support events")
    p.add_argument("--config", default=None, help="pipeline config JSON")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-shots", type=int, default=5)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("bench", help="compare configs over a corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", action="append", default=[], help="repeatable")
    p.add_argument("--label", action="append", default=[], help="one per config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--profile", required=True, help=f"one of {sorted(PROFILES)}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, default=10, help="number of test recordings")
    p.add_argument("--train", type=int, default=0, help="number of extra train recordings")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("eval", help="score predictions against reference events")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--min-iou", type=float, default=0.3)
    p.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FewsedError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""End-to-end command line flow: synth -> detect -> bench -> eval."""

import json

import pytest

from fewsed.cli import main
from fewsed.pipeline import PipelineConfig, save_config


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    rc = main(["synth", "--profile", "easy", "--seed", "4", "--out-dir", str(d), "--count", "2"])
    assert rc == 0
    return d


def test_synth_writes_corpus(corpus):
    doc = json.loads((corpus / "manifest.json").read_text())
    assert len(doc["recordings"]) == 2
    for r in doc["recordings"]:
        assert (corpus / r["wav_path"]).exists()
        assert (corpus / r["csv_path"]).exists()


def test_synth_unknown_profile(tmp_path):
    assert main(["synth", "--profile", "nope", "--out-dir", str(tmp_path)]) == 2


def test_detect_outputs(corpus, tmp_path, capsys):
    rc = main(
        [
            "detect",
            "--wav", str(corpus / "easy_000.wav"),
            "--csv", str(corpus / "easy_000.csv"),
            "--out-dir", str(tmp_path),
        ]
    )
    assert rc == 0
    for name in ("predictions.csv", "trace.csv", "classifier.json", "report.json", "episode.png"):
        assert (tmp_path / name).exists(), name
    out = capsys.readouterr().out
    assert "easy_000:" in out and "F=" in out
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["recording"] == "easy_000"
    assert report["classifier_chain"] == ["W0", "W1"]
    # no adaptation ran, so no steps file
    assert not (tmp_path / "steps.jsonl").exists()


def test_detect_no_figures_flag(corpus, tmp_path):
    rc = main(
        [
            "detect",
            "--wav", str(corpus / "easy_000.wav"),
            "--csv", str(corpus / "easy_000.csv"),
            "--out-dir", str(tmp_path),
            "--no-figures",
        ]
    )
    assert rc == 0
    assert not (tmp_path / "episode.png").exists()
    assert (tmp_path / "predictions.csv").exists()


def test_detect_with_config_and_adaptation(corpus, tmp_path):
    cfg = PipelineConfig(use_nss=True, use_al=True)
    cfg_path = tmp_path / "cfg.json"
    save_config(cfg_path, cfg)
    out = tmp_path / "out"
    rc = main(
        [
            "detect",
            "--wav", str(corpus / "easy_001.wav"),
            "--csv", str(corpus / "easy_001.csv"),
            "--config", str(cfg_path),
            "--out-dir", str(out),
            "--no-figures",
        ]
    )
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert report["classifier_chain"] == ["W0", "W1", "W2", "adapted"]
    classifier = json.loads((out / "classifier.json").read_text())
    assert classifier["provenance"] == "adapted"
    if "adaptation" in report:
        assert (out / "steps.jsonl").exists()


def test_detect_missing_wav_exits_one(corpus, tmp_path, capsys):
    rc = main(
        [
            "detect",
            "--wav", str(corpus / "missing.wav"),
            "--csv", str(corpus / "easy_000.csv"),
            "--out-dir", str(tmp_path),
        ]
    )
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_bench_flow(corpus, tmp_path, capsys):
    cfg_path = tmp_path / "random.json"
    save_config(cfg_path, PipelineConfig(negative_source="random_query"))
    out = tmp_path / "bench"
    rc = main(
        [
            "bench",
            "--manifest", str(corpus / "manifest.json"),
            "--config", str(cfg_path),
            "--label", "random",
            "--out-dir", str(out),
        ]
    )
    assert rc == 0
    assert (out / "report.json").exists()
    assert (out / "comparison.csv").exists()
    assert (out / "benchmark.png").exists()
    lines = (out / "comparison.csv").read_text().splitlines()
    assert len(lines) == 2
    assert lines[1].startswith("random,")
    doc = json.loads((out / "report.json").read_text())
    assert doc["configs"][0]["label"] == "random"
    assert "easy" in doc["configs"][0]["per_profile"]
    assert "random:" in capsys.readouterr().out


def test_bench_default_config(corpus, tmp_path):
    out = tmp_path / "bench"
    rc = main(
        [
            "bench",
            "--manifest", str(corpus / "manifest.json"),
            "--out-dir", str(out),
            "--no-figures",
        ]
    )
    assert rc == 0
    lines = (out / "comparison.csv").read_text().splitlines()
    assert lines[1].startswith("default,")
    assert not (out / "benchmark.png").exists()


def test_bench_label_count_mismatch(corpus, tmp_path):
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    save_config(a, PipelineConfig())
    save_config(b, PipelineConfig(use_nss=True))
    rc = main(
        [
            "bench",
            "--manifest", str(corpus / "manifest.json"),
            "--config", str(a),
            "--config", str(b),
            "--label", "only-one",
            "--out-dir", str(tmp_path / "x"),
        ]
    )
    assert rc == 2


def test_eval_command(corpus, tmp_path, capsys):
    # detect first, then score its own predictions
    out = tmp_path / "det"
    main(
        [
            "detect",
            "--wav", str(corpus / "easy_000.wav"),
            "--csv", str(corpus / "easy_000.csv"),
            "--out-dir", str(out),
            "--no-figures",
        ]
    )
    capsys.readouterr()
    rc = main(
        [
            "eval",
            "--pred", str(out / "predictions.csv"),
            "--ref", str(corpus / "easy_000.csv"),
        ]
    )
    assert rc == 0
    line = capsys.readouterr().out
    assert "P=" in line and "tp=" in line


def test_eval_bad_predictions_exits_one(corpus, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("start,stop\n0,1\n")
    rc = main(["eval", "--pred", str(bad), "--ref", str(corpus / "easy_000.csv")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err

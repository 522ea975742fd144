from __future__ import annotations

import json

import pytest

from neolus.cli import main
from neolus.metrics import MetricsReport, load_predictions_csv
from neolus.reporting import parse_metrics_table


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """phantom-gen -> split -> train -> evaluate, all through the CLI."""
    base = tmp_path_factory.mktemp("cli")
    data = base / "phantom"
    run = base / "run"

    spec = base / "phantom.ini"
    spec.write_text(
        "[phantom]\n"
        "n_patients = 10\n"
        "videos_per_session = 1\n"
        "frames_per_video = 6\n"
        "seed = 4\n",
        encoding="utf-8",
    )
    assert main(["phantom-gen", "--spec", str(spec), "--out", str(data)]) == 0

    assert main([
        "split", "--manifest", str(data / "manifest.csv"),
        "--scheme", "holdout:0.5/0.25/0.25", "--seed", "3",
        "--out", str(base / "split.json"),
    ]) == 0

    config = base / "run.ini"
    config.write_text(
        "[paths]\n"
        f"manifest = {data / 'manifest.csv'}\n"
        f"out_dir = {run}\n"
        f"split = {base / 'split.json'}\n\n"
        "[backbone]\nname = tiny\npretrained = false\n\n"
        "[head]\npooling = position_preserving\ntask = classification\n\n"
        "[training]\nstrategy = classification\nepochs = 2\nlearning_rate = 0.001\nseed = 1\n\n"
        "[augmentation]\nseed = 1\n",
        encoding="utf-8",
    )
    assert main(["train", "--config", str(config)]) == 0

    assert main([
        "evaluate", "--checkpoint", str(run / "checkpoint.pt"),
        "--manifest", str(data / "manifest.csv"),
        "--split", str(base / "split.json"),
        "--out", str(run),
    ]) == 0
    return base, data, run


def test_pipeline_writes_artifacts(pipeline):
    base, data, run = pipeline
    assert (data / "manifest.csv").exists()
    assert (data / "phantom_spec.resolved.ini").exists()
    assert (base / "split.json").exists()
    assert (run / "checkpoint.pt").exists()
    assert (run / "training_log.jsonl").exists()
    assert (run / "run_config.resolved.ini").exists()
    assert (run / "metrics.json").exists()
    assert (run / "predictions.csv").exists()
    report = MetricsReport.from_json((run / "metrics.json").read_text())
    assert report.task == "classification"
    assert set(report.values) == {"frame", "video", "session"}
    log_lines = (run / "training_log.jsonl").read_text().strip().splitlines()
    assert len(log_lines) == 2
    assert set(json.loads(log_lines[0])) == {
        "epoch", "train_loss", "val_spearman_session", "val_mape_or_acc"
    }


def test_predictions_respect_test_frame_budget(pipeline):
    _, _, run = pipeline
    pset = load_predictions_csv(run / "predictions.csv")
    per_video = {}
    for entry in pset.entries:
        per_video.setdefault(entry.video_id, 0)
        per_video[entry.video_id] += 1
    assert all(n <= 6 for n in per_video.values())


def test_report_table_and_json(pipeline, capsys):
    _, _, run = pipeline
    assert main(["report", "--predictions", str(run / "predictions.csv"), "--format", "table"]) == 0
    table = capsys.readouterr().out
    parsed = parse_metrics_table(table)
    assert parsed.task == "classification"
    assert set(parsed.values["session"]) == {"spearman", "accuracy"}

    assert main(["report", "--predictions", str(run / "predictions.csv"), "--format", "json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["task"] == "classification"
    round_tripped = MetricsReport.from_json(json.dumps(payload))
    table_report = parse_metrics_table(table)
    for level in round_tripped.values:
        for metric, value in round_tripped.values[level].items():
            assert table_report.values[level][metric] == pytest.approx(value, rel=1e-5)


def test_plot_command(pipeline, capsys):
    base, data, run = pipeline
    out = base / "scatter.png"
    assert main([
        "plot", "--predictions", str(run / "predictions.csv"),
        "--manifest", str(data / "manifest.csv"),
        "--out", str(out),
    ]) == 0
    capsys.readouterr()
    assert out.exists() and out.stat().st_size > 0
    assert out.with_suffix(".png.csv").exists()
    assert out.with_suffix(".png.config.ini").exists()


def test_resolved_config_is_reusable(pipeline, tmp_path):
    base, _, run = pipeline
    resolved = (run / "run_config.resolved.ini").read_text()
    redirected = resolved.replace(str(run), str(tmp_path / "rerun"))
    config = tmp_path / "rerun.ini"
    config.write_text(redirected, encoding="utf-8")
    assert main(["train", "--config", str(config)]) == 0
    assert (tmp_path / "rerun" / "checkpoint.pt").exists()


def test_errors_are_single_json_line(capsys):
    code = main(["report", "--predictions", "/nonexistent/preds.csv"])
    assert code == 1
    err = capsys.readouterr().err.strip()
    assert len(err.splitlines()) == 1
    payload = json.loads(err)
    assert payload["command"] == "report"
    assert "error" in payload


def test_split_cli_writes_plan(tmp_path, mini_phantom, capsys):
    dataset, root = mini_phantom
    out = tmp_path / "plan.json"
    assert main([
        "split", "--manifest", str(dataset.manifest_path),
        "--scheme", "kfold:3", "--seed", "11", "--out", str(out),
    ]) == 0
    capsys.readouterr()
    payload = json.loads(out.read_text())
    assert payload["scheme"] == "kfold:3"
    assert set(payload["assignments"]) == set(dataset.manifest.patients)

import csv
import json
import math

import pytest
import yaml

from pemant.cli import main


def run_cli(tmp_path, fixture_dir, *args):
    out = tmp_path / "run"
    code = main([*args, "-c", str(fixture_dir / "config.yaml"), "--run-dir", str(out)])
    return code, out


def transcripts(run_dir):
    return [json.loads(line) for line in (run_dir / "transcripts.jsonl").read_text().splitlines()]


def test_validate_config(fixture_dir, capsys):
    assert main(["validate-config", "-c", str(fixture_dir / "config.yaml")]) == 0
    assert "ok:" in capsys.readouterr().out


def test_predict_writes_finite_metrics(tmp_path, fixture_dir):
    code, out = run_cli(tmp_path, fixture_dir, "predict")
    assert code == 0
    metrics = json.loads((out / "metrics.json").read_text())
    for key in ("mae", "rmse", "smape_percent", "acc_within_2"):
        assert math.isfinite(metrics[key])
    manifest = json.loads((out / "manifest.json").read_text())
    assert all((out / name).exists() for name in manifest["outputs"])
    rows = list(csv.DictReader((out / "predictions.csv").open()))
    assert rows and all(0 <= int(r["y_hat"]) for r in rows)


def test_predictions_deterministic(tmp_path, fixture_dir):
    _, a = run_cli(tmp_path / "a", fixture_dir, "predict")
    _, b = run_cli(tmp_path / "b", fixture_dir, "predict", "--workers", "4")
    for name in ("predictions.csv", "transcripts.jsonl", "metrics.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_missing_anchors_is_config_error(tmp_path, fixture_dir, capsys):
    cfg = yaml.safe_load((fixture_dir / "config.yaml").read_text())
    cfg["anchors"] = "nope.yaml"
    for k, v in cfg["data"].items():
        cfg["data"][k] = str(fixture_dir / v)
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(cfg))
    assert main(["predict", "-c", str(path), "--run-dir", str(tmp_path / "r")]) == 3
    assert "anchors" in capsys.readouterr().err


def test_usage_errors(fixture_dir):
    assert main(["baseline", "bogus", "-c", str(fixture_dir / "config.yaml")]) == 2
    assert main([]) == 2


def test_household_baseline_prompts_carry_anchor(tmp_path, fixture_dir):
    code, out = run_cli(tmp_path, fixture_dir, "baseline", "household_copb")
    assert code == 0
    prompts = [json.loads(line) for line in (out / "prompts.jsonl").read_text().splitlines()]
    assert prompts
    for p in prompts:
        text = p["messages"][-1]["content"]
        assert "trips" in text and any(ch.isdigit() for ch in text)


def test_demographics_baseline(tmp_path, fixture_dir):
    code, out = run_cli(tmp_path, fixture_dir, "baseline", "demographics")
    assert code == 0 and (out / "metrics.json").exists()


def test_no_moderator_ablation(tmp_path, fixture_dir):
    code, out = run_cli(tmp_path, fixture_dir, "ablate", "no_moderator")
    assert code == 0
    assert all(t["rejected"] == [] for t in transcripts(out))


def test_no_parallel_ablation(tmp_path, fixture_dir):
    code, out = run_cli(tmp_path, fixture_dir, "ablate", "no_parallel")
    assert code == 0
    assert all(t["initial_votes"] == {} for t in transcripts(out))


def test_full_has_initial_votes(tmp_path, fixture_dir):
    _, out = run_cli(tmp_path, fixture_dir, "predict")
    ts = transcripts(out)
    assert ts and all(set(t["initial_votes"]) == set(t["speaking_order"]) for t in ts)


def test_sft_export_and_perception(tmp_path, fixture_dir):
    code, out = run_cli(tmp_path / "s", fixture_dir, "sft-export", "--k", "2", "--m", "2")
    assert code == 0
    for line in (out / "sft_dialogues.jsonl").read_text().splitlines():
        rec = json.loads(line)
        assert rec["messages"][-1]["role"] == "assistant"
    code, out = run_cli(tmp_path / "p", fixture_dir, "perception")
    assert code == 0
    assert "instruments" in json.loads((out / "perception_metrics.json").read_text())


def test_make_fixture(tmp_path):
    assert main(["make-fixture", str(tmp_path / "fx"), "--households", "4"]) == 0
    assert main(["validate-config", "-c", str(tmp_path / "fx" / "config.yaml")]) == 0

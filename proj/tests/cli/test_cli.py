"""Command-line behaviour of the pafforge binary: output, exit codes, determinism."""

import json
import os
import subprocess
from pathlib import Path

import pytest

BIN = os.environ.get("PAFFORGE_BIN", "pafforge")

CONFIG = {
    "model": {
        "input": [4],
        "layers": [
            {"type": "linear", "out": 8}, {"type": "relu"}, {"type": "dropout"},
            {"type": "linear", "out": 8}, {"type": "relu"},
            {"type": "linear", "out": 3},
        ],
    },
    "dataset": {"kind": "blobs", "n": 150, "classes": 3, "dims": 4,
                "cluster_std": 2.0, "center_box": 4.0, "seed": 2},
    "paf": "f1^2∘g1^2",
    "train": {"group_epochs": 2, "lr_paf": 1e-3, "lr_other": 1e-4, "batch_size": 32},
    "ct": {"epochs": 5},
    "pretrain": {"epochs": 10, "lr": 5e-3},
    "ct_max_records": 300,
    "max_groups_per_step": 3,
    "seed": 7,
    "output": "out",
}


def run(*args, env=None, check_code=0):
    full_env = dict(os.environ)
    full_env.pop("PAFFORGE_SEED", None)
    full_env.update(env or {})
    proc = subprocess.run([BIN, *args], capture_output=True, text=True, env=full_env)
    if check_code is not None:
        assert proc.returncode == check_code, proc.stdout + proc.stderr
    return proc


def write_config(tmp_path, **overrides):
    cfg = json.loads(json.dumps(CONFIG))
    cfg.update(overrides)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return path


def test_catalog_and_depth():
    out = run("catalog", "list").stdout
    for name in ["alpha7", "f1^2∘g1^2", "f2∘g3", "f2∘g2", "f1∘g2"]:
        assert name in out
    assert "depth 5" in run("depth", "f1og2").stdout
    shown = json.loads(run("catalog", "show", "f1_g2").stdout)
    assert len(shown["per_layer"]) == 17


def test_eval_and_cost():
    res = json.loads(run("eval", "alpha7", "--x", "1").stdout)
    assert abs(res["sign"] - 0.9861) < 1e-4
    layered = json.loads(run("eval", "f1_g2", "--x", "0.3", "--layer", "2").stdout)
    assert layered["layer"] == 2
    cost = json.loads(run("cost", "f1∘g2").stdout)
    assert (cost["depth"], cost["nonscalar_mults"]) == (5, 5)
    assert cost["latency_ms"] is None
    cal = json.loads(run("cost", "alpha7", "--calibrate").stdout)
    assert len(cal["calibration"]["points"]) == 5
    assert all("residual_ms" in p for p in cal["calibration"]["points"])


def test_config_errors_exit_2(tmp_path):
    run("depth", "alpha99", check_code=2)
    run("eval", "alpha7", check_code=2)  # missing --x
    run("report", "convert", "a.json", "b.out", "--format", "xml", check_code=2)
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**CONFIG, "learning_rate": 1}))
    run("train", "--config", str(bad), check_code=2)
    bad.write_text("{not json")
    run("train", "--config", str(bad), check_code=2)
    run("schedule", "--config", str(tmp_path / "absent.json"), check_code=2)


def test_data_errors_exit_3(tmp_path):
    cfg = write_config(tmp_path, dataset={"kind": "csv", "path": "missing.csv"})
    run("train", "--config", str(cfg), check_code=3)
    (tmp_path / "ragged.csv").write_text("1,2,0\n3,0\n")
    cfg = write_config(tmp_path, dataset={"kind": "csv", "path": "ragged.csv"})
    proc = run("train", "--config", str(cfg), check_code=3)
    assert "line 2" in proc.stderr
    run("report", "convert", str(tmp_path / "none.json"), str(tmp_path / "x.csv"), check_code=3)


def test_divergence_exit_4(tmp_path):
    cfg = write_config(tmp_path, ct={"epochs": 5, "lr": 1e6, "batch_size": 0})
    run("ct", "collect", "--config", str(cfg))
    assert (tmp_path / "out" / "ct_dataset.json").exists()
    run("ct", "tune", "--config", str(cfg), check_code=4)


def test_ct_tune_writes_tuned_paf(tmp_path):
    cfg = write_config(tmp_path)
    run("ct", "collect", "--config", str(cfg))
    run("ct", "tune", "--config", str(cfg))
    tuned = json.loads((tmp_path / "out" / "tuned_paf.json").read_text())
    assert set(tuned["paf"]["per_layer"]) == {"0", "1"}
    assert all(r["best_val_loss"] <= r["initial_val_loss"] for r in tuned["ct"])


def test_schedule_is_deterministic_and_resumable(tmp_path):
    cfg = write_config(tmp_path)
    report = tmp_path / "out" / "report.json"
    run("schedule", "--config", str(cfg), "--fresh")
    first = report.read_bytes()
    run("schedule", "--config", str(cfg), "--fresh")
    assert report.read_bytes() == first

    run("schedule", "--config", str(cfg), "--fresh", "--max-groups", "1")
    partial = json.loads(report.read_text())
    assert not partial["complete"]
    while not json.loads(report.read_text())["complete"]:
        run("schedule", "--config", str(cfg), "--max-groups", "2")
    assert report.read_bytes() == first

    doc = json.loads(first)
    assert doc["seed"] == 7 and len(doc["config_hash"]) == 16
    assert len(doc["steps"]) == 2
    assert doc["total_epochs"] == 2 * sum(len(s["groups"]) for s in doc["steps"])
    assert (tmp_path / "out" / "report.csv").exists()
    assert (tmp_path / "out" / "report_model.json").exists()

    run("baseline", "--config", str(cfg), "--fresh")
    base = json.loads((tmp_path / "out" / "baseline_report.json").read_text())
    assert base["total_epochs"] == doc["total_epochs"]

    csv_path = tmp_path / "converted.csv"
    run("report", "convert", str(report), str(csv_path))
    assert len(csv_path.read_text().splitlines()) == sum(len(s["groups"]) for s in doc["steps"]) + 1


def test_seed_override(tmp_path):
    cfg = write_config(tmp_path)
    run("schedule", "--config", str(cfg), "--fresh", env={"PAFFORGE_SEED": "11"})
    doc = json.loads((tmp_path / "out" / "report.json").read_text())
    assert doc["seed"] == 11
    run("schedule", "--config", str(cfg), env={"PAFFORGE_SEED": "abc"}, check_code=2)

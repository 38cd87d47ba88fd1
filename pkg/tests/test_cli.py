import json
import subprocess
import sys

import pytest

from dialexperts.cli import main

from test_pipeline import TINY


@pytest.fixture
def run_config(corpus_dir, tmp_path):
    values = dict(TINY, out_dir="run")
    values["data.stage3.train"] = str(corpus_dir / "stage3-video" / "samples.jsonl")
    values["data.stage3.val"] = str(corpus_dir / "stage3-video" / "samples.jsonl")
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(values))
    return path


def test_gen_data(tmp_path, capsys):
    assert main(["gen-data", "--kind", "stage3-image", "--n", "4", "--seed", "2", "--out", str(tmp_path / "d")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["verified"] and (tmp_path / "d" / "samples.jsonl").exists()


def test_train_eval_and_swaps(run_config, corpus_dir, tmp_path, capsys):
    assert main(["train", "--stage", "3", "--config", str(run_config)]) == 2
    assert main(["train", "--stage", "3", "--config", str(run_config), "--from-scratch"]) == 0
    ckpt = json.loads(capsys.readouterr().out.strip().splitlines()[-1])["checkpoint"]
    assert ckpt.startswith(str(tmp_path / "run"))
    video = str(corpus_dir / "stage3-video" / "samples.jsonl")
    image = str(corpus_dir / "stage3-image" / "samples.jsonl")
    assert main(["eval", "--ckpt", ckpt, "--data", video, "--mode", "nlg", "--out", str(tmp_path / "ev")]) == 0
    assert (tmp_path / "ev" / "report.png").exists()
    assert main(["eval", "--ckpt", ckpt, "--data", image, "--swap", "spa:tmp"]) == 2
    assert main(["eval", "--ckpt", ckpt, "--data", image, "--embedder", "ftp://x"]) == 2
    assert main(["eval", "--ckpt", ckpt, "--data", str(tmp_path / "none.jsonl")]) == 3
    capsys.readouterr()
    assert main(["eval", "--ckpt", ckpt, "--data", image, "--swap-study", "--out", str(tmp_path / "sw")]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert list(rows) == ["none", "cap:ctx"]
    assert (tmp_path / "sw" / "swaps.png").exists()


def test_train_config_errors(tmp_path, run_config):
    assert main(["train", "--stage", "3", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["train", "--stage", "3", "--config", str(run_config), "--ablate", "no-thing"]) == 2
    with pytest.raises(SystemExit):
        main(["train", "--stage", "5", "--config", str(run_config)])


def test_report_writes_tsv_json_png(tmp_path, capsys):
    pred = tmp_path / "pred.jsonl"
    ref = tmp_path / "ref.jsonl"
    pred.write_text(json.dumps({"id": "a", "generated": "two red circles"}) + "\n")
    ref.write_text(json.dumps({"id": "a", "references": ["two red circles"]}) + "\n")
    assert main(["report", "--pred", str(pred), "--ref", str(ref), "--out", str(tmp_path / "o")]) == 0
    assert capsys.readouterr().out.startswith("metric\tvalue")
    metrics = json.loads((tmp_path / "o" / "pred.metrics.json").read_text())
    assert metrics["B-1"] == 1.0
    assert (tmp_path / "o" / "pred.metrics.tsv").exists() and (tmp_path / "o" / "pred.metrics.png").exists()
    ref.write_text("")
    assert main(["report", "--pred", str(pred), "--ref", str(ref)]) == 3


def test_log_level_from_environment(tmp_path):
    env = {"V2D_LOG": "ERROR", "PATH": "/usr/bin:/bin"}
    proc = subprocess.run(
        [sys.executable, "-m", "dialexperts.cli", "train", "--stage", "1", "--config", str(tmp_path / "x.json")],
        capture_output=True, text=True, env=env,
    )
    assert proc.returncode == 2 and "ERROR" in proc.stderr
    env["V2D_LOG"] = "CRITICAL"
    proc = subprocess.run(
        [sys.executable, "-m", "dialexperts.cli", "train", "--stage", "1", "--config", str(tmp_path / "x.json")],
        capture_output=True, text=True, env=env,
    )
    assert proc.returncode == 2 and proc.stderr == ""

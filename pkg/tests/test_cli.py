import json
import os
import subprocess
import sys

import pytest

from softunlearn.cli import main, parse_args
from softunlearn.files import read_json, read_table


def _run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def data_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert _run("gen-synthetic", "--n", 150, "--seed", 0, "--out", out) == 0
    return out / "dataset.csv"


def test_pipeline(tmp_path, data_csv):
    assert _run("train", "--data", data_csv, "--out", tmp_path / "t") == 0
    model = tmp_path / "t" / "model.json"
    assert read_json(model)["split_sizes"] == {"train": 100, "validation": 25, "test": 25}

    assert _run("influence", "--data", data_csv, "--model", model, "--out", tmp_path / "i") == 0
    rows = read_table(tmp_path / "i" / "influence.csv", "influence")
    assert len(rows) == 100 and rows[0]["metric_kind"] == "dp"

    assert _run("solve-weights", "--influence", tmp_path / "i" / "influence.csv", "--lambda", 2.0,
                "--out", tmp_path / "w") == 0
    meta = read_json(tmp_path / "w" / "weights.json")
    assert meta["case_id"] in (1, 2, 3, 4) and meta["qp_lambda"] == 2.0
    assert meta["linearized_util_change"] <= 1e-12

    assert _run("unlearn", "--data", data_csv, "--model", model, "--out", tmp_path / "u") == 0
    report = read_json(tmp_path / "u" / "report.json")
    assert report["corrected"] and "step_runtimes" not in report
    manifest = read_json(tmp_path / "u" / "manifest.unlearn.json")
    assert set(manifest["timings_seconds"]) >= {"evaluate", "optimize", "correct", "total"}
    assert sorted(manifest["outputs"]) == ["metrics.csv", "report.json", "weights.csv"]


def test_loo_and_benchmark_commands(tmp_path, data_csv):
    assert _run("loo-oracle", "--data", data_csv, "--metrics", "dp", "--out", tmp_path / "l") == 0
    assert len(read_table(tmp_path / "l" / "loo_dp.csv", "loo")) == 100
    assert _run("loo-oracle", "--data", data_csv, "--cap", 10, "--out", tmp_path / "l2") == 2
    assert _run("benchmark", "--data", data_csv, "--algorithms", "if", "--epochs", 2,
                "--out", tmp_path / "b") == 0
    assert len(read_table(tmp_path / "b" / "benchmark.csv", "benchmark")) == 2
    assert len(read_table(tmp_path / "b" / "sweep.csv", "sweep")) == 7


def test_fair_data_is_not_corrected(tmp_path):
    assert _run("gen-synthetic", "--kind", "symmetric", "--n", 120, "--out", tmp_path) == 0
    assert _run("unlearn", "--data", tmp_path / "dataset.csv", "--out", tmp_path / "u") == 0
    report = read_json(tmp_path / "u" / "report.json")
    assert not report["corrected"] and report["gate_metric"] == 0.0
    assert not (tmp_path / "u" / "weights.csv").exists()


def test_exit_codes(tmp_path, data_csv, capsys):
    assert _run("train", "--data", tmp_path / "missing.csv", "--out", tmp_path / "x") == 1
    assert _run("train", "--data", data_csv, "--bogus", "--out", tmp_path / "x") == 1
    assert _run("train", "--out", tmp_path / "x") == 1  # --data missing
    bad = tmp_path / "bad.csv"
    bad.write_text("a,label,sensitive\n1,2,0\n2,1,1\n3,0,1\n")
    assert _run("train", "--data", bad, "--out", tmp_path / "x") == 2
    assert _run("unlearn", "--data", data_csv, "--gamma", 0.5, "--out", tmp_path / "x") == 1
    err = capsys.readouterr().err
    assert "error" in err


def test_config_file_precedence(tmp_path, data_csv):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# options\ndata = {data_csv}\nlambda = 3.5\nepochs = 7\n")
    args = parse_args(["unlearn", "--config", str(cfg), "--out", "o"])
    assert args.data == str(data_csv) and args.qp_lambda == 3.5 and args.epochs == 7
    args = parse_args(["unlearn", "--config", str(cfg), "--epochs", "9", "--out", "o"])
    assert args.epochs == 9 and args.qp_lambda == 3.5
    args = parse_args(["unlearn", "--data", "x.csv", "--out", "o"])
    assert args.epochs == 30
    cfg.write_text("colour = red\n")
    assert _run("train", "--data", data_csv, "--config", cfg, "--out", tmp_path / "o") == 1


def _payload_bytes(out_dir):
    return {p.name: p.read_bytes() for p in sorted(out_dir.iterdir()) if not p.name.startswith("manifest.")}


def test_outputs_are_byte_reproducible(tmp_path, data_csv):
    for run in ("a", "b"):
        assert _run("unlearn", "--data", data_csv, "--method", "soft_gd", "--epochs", 3,
                    "--out", tmp_path / run) == 0
    a, b = _payload_bytes(tmp_path / "a"), _payload_bytes(tmp_path / "b")
    assert a and a == b


def test_console_script_entry_point(tmp_path):
    env = dict(os.environ)
    out = subprocess.run([sys.executable, "-m", "softunlearn.cli", "gen-synthetic", "--n", "30",
                          "--out", str(tmp_path)], capture_output=True, text=True, env=env)
    assert out.returncode == 0, out.stderr
    manifest = json.loads((tmp_path / "manifest.gen-synthetic.json").read_text())
    assert manifest["argv"][0] == "gen-synthetic"
    assert manifest["versions"]["kernel_backend"] in ("cython", "python")

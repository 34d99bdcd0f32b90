import hashlib
import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from neuralvol import mlp
from neuralvol.cli import main


@pytest.fixture()
def runner():
    return CliRunner()


def sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def invoke(runner, args):
    result = runner.invoke(main, args, catch_exceptions=False)
    return result


def test_generate_writes_dataset_and_manifest(runner, tmp_path):
    out = str(tmp_path / "bs.csv")
    result = invoke(runner, ["generate", "--model", "bs", "--variant", "wide",
                             "--n", "100", "--seed", "42", "--out", out])
    assert result.exit_code == 0
    assert os.path.exists(out)
    assert os.path.exists(out + ".meta.json")
    with open(out + ".manifest.json") as fh:
        manifest = json.load(fh)
    assert manifest["command"] == "generate"
    assert manifest["args"]["seed"] == 42
    with open(out) as fh:
        header = fh.readline().strip()
    assert header.startswith("moneyness:input")
    assert sum(1 for _ in open(out)) == 101


def test_generate_invalid_variant_exits_2(runner, tmp_path):
    result = runner.invoke(main, ["generate", "--model", "bs", "--variant",
                                  "medium", "--n", "10", "--out",
                                  str(tmp_path / "x.csv")])
    assert result.exit_code == 2


def test_train_eval_and_replay_are_deterministic(runner, tmp_path):
    data = str(tmp_path / "bs.csv")
    invoke(runner, ["generate", "--model", "bs", "--n", "400", "--seed", "1",
                    "--out", data])
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "hidden_layer_sizes": [16, 16], "epochs": 4, "batch_size": 128,
        "random_state": 0,
    }))
    model_out = str(tmp_path / "model.json")
    result = invoke(runner, ["train", "--data", data, "--config", str(config),
                             "--out", model_out])
    assert result.exit_code == 0
    assert os.path.exists(model_out + ".history.csv")
    first_hash = sha256(model_out)

    # replay from the manifest must reproduce the identical model file
    result = invoke(runner, ["replay", model_out + ".manifest.json"])
    assert result.exit_code == 0
    assert sha256(model_out) == first_hash

    eval_out = str(tmp_path / "metrics.json")
    result = invoke(runner, ["eval", "--model", model_out, "--data", data,
                             "--out", eval_out])
    assert result.exit_code == 0
    with open(eval_out) as fh:
        report = json.load(fh)
    assert {"mse", "rmse", "mae", "r2", "n"} <= set(report)
    assert report["n"] == 400


def test_train_flag_overrides_config(runner, tmp_path):
    data = str(tmp_path / "bs.csv")
    invoke(runner, ["generate", "--model", "bs", "--n", "300", "--seed", "1",
                    "--out", data])
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "hidden_layer_sizes": [8], "epochs": 50, "batch_size": 128,
    }))
    model_out = str(tmp_path / "model.json")
    result = invoke(runner, ["train", "--data", data, "--config", str(config),
                             "--out", model_out, "--epochs", "2"])
    assert result.exit_code == 0
    history = open(model_out + ".history.csv").read().strip().splitlines()
    assert len(history) == 3  # header + 2 epochs


def test_train_missing_column_exits_2(runner, tmp_path):
    data = str(tmp_path / "bs.csv")
    invoke(runner, ["generate", "--model", "bs", "--n", "100", "--seed", "1",
                    "--out", data])
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "hidden_layer_sizes": [8], "epochs": 1, "batch_size": 64,
        "input_columns": ["moneyness", "vol_of_vol"],
    }))
    result = runner.invoke(main, ["train", "--data", data, "--config",
                                  str(config), "--out", str(tmp_path / "m.json")])
    assert result.exit_code == 2
    assert "vol_of_vol" in result.output


def test_train_divergence_exits_4(runner, tmp_path):
    data = str(tmp_path / "bs.csv")
    invoke(runner, ["generate", "--model", "bs", "--n", "300", "--seed", "1",
                    "--out", data])
    config = tmp_path / "config.json"
    # a linear network with an absurd constant learning rate diverges to
    # infinity on the first update (relu would merely saturate at zero)
    config.write_text(json.dumps({
        "hidden_layer_sizes": [16], "activation": "identity", "epochs": 5,
        "batch_size": 128, "optimizer": "sgd", "schedule": "constant",
        "learning_rate": 1e12, "standardize": False,
    }))
    result = runner.invoke(main, ["train", "--data", data, "--config",
                                  str(config), "--out", str(tmp_path / "m.json")])
    assert result.exit_code == 4
    assert "step" in result.output


def test_bench_iv_outputs_table(runner, tmp_path):
    out = str(tmp_path / "bench.csv")
    result = invoke(runner, ["bench-iv", "--n", "100", "--methods",
                             "newton,brent,bisection", "--out", out,
                             "--warmup", "0", "--runs", "1"])
    assert result.exit_code == 0
    lines = open(out).read().strip().splitlines()
    assert lines[0] == "method,failures,mae,max_abs_error,total_function_evals"
    assert len(lines) == 4
    with open(out + ".timing.json") as fh:
        timing = json.load(fh)
    assert set(timing) == {"newton", "brent", "bisection"}


def test_bench_iv_ann_without_model_exits_2(runner, tmp_path):
    result = runner.invoke(main, ["bench-iv", "--n", "50", "--methods", "ann",
                                  "--out", str(tmp_path / "b.csv")])
    assert result.exit_code == 2


def test_surface_command(runner, tmp_path):
    net = str(tmp_path / "iv.json")
    mlp.save_model(mlp.init([4, 8, 1], "relu", seed=0), net)
    out = str(tmp_path / "surface.csv")
    result = invoke(runner, [
        "surface", "--model", net,
        "--heston", "rho=-0.05,kappa=1.5,gamma=0.3,nubar=0.1,nu0=0.1,r=0.02",
        "--m-grid", "0.7:1.3:4", "--tau-grid", "0.5:1.0:3", "--out", out,
    ])
    assert result.exit_code == 0
    lines = open(out).read().strip().splitlines()
    assert lines[0] == "tau,moneyness,ann_vol,brent_vol,cos_price"
    assert len(lines) == 13
    with open(out + ".summary.json") as fh:
        summary = json.load(fh)
    assert "max_abs_deviation" in summary


def test_surface_rejects_malformed_heston_spec(runner, tmp_path):
    net = str(tmp_path / "iv.json")
    mlp.save_model(mlp.init([4, 8, 1], "relu", seed=0), net)
    result = runner.invoke(main, ["surface", "--model", net, "--heston",
                                  "rho=-0.05", "--out", str(tmp_path / "s.csv")])
    assert result.exit_code == 2
    assert "kappa" in result.output


def test_lr_range_command(runner, tmp_path):
    data = str(tmp_path / "bs.csv")
    invoke(runner, ["generate", "--model", "bs", "--n", "300", "--seed", "3",
                    "--out", data])
    out = str(tmp_path / "lr.csv")
    result = invoke(runner, ["lr-range", "--data", data, "--steps", "15",
                             "--neurons", "8", "--out", out])
    assert result.exit_code == 0
    assert open(out).readline().strip() == "eta,smoothed_loss"
    with open(out + ".summary.json") as fh:
        summary = json.load(fh)
    assert summary["eta_steepest"] > 0


def test_replay_rejects_malformed_manifest(runner, tmp_path):
    bad = tmp_path / "bad.manifest.json"
    bad.write_text("{\"command\": \"no-such-command\", \"args\": {}}")
    result = runner.invoke(main, ["replay", str(bad)])
    assert result.exit_code == 2


def test_generate_replay_hash_identical(runner, tmp_path):
    out = str(tmp_path / "heston.csv")
    invoke(runner, ["generate", "--model", "heston", "--n", "50", "--seed", "7",
                    "--out", out])
    h = sha256(out)
    invoke(runner, ["replay", out + ".manifest.json"])
    assert sha256(out) == h


def test_threads_env_fallback(runner, tmp_path, monkeypatch):
    monkeypatch.setenv("PRICER_THREADS", "1")
    out = str(tmp_path / "bs.csv")
    result = invoke(runner, ["generate", "--model", "bs", "--n", "20",
                             "--seed", "0", "--out", out])
    assert result.exit_code == 0
    assert os.environ["OMP_NUM_THREADS"] == "1"

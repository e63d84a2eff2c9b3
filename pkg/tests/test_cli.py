import json

import numpy as np
import pytest

import distboost as db
from distboost.cli import main


def _gamma_csv(tmp_path, n=400, seed=1):
    ds = db.generate_synthetic("gamma", n, seed,
                               lambda X: {"mu": np.where(X[:, 0] < 0.5, 2.0, 6.0),
                                          "alpha": 5.0})
    path = str(tmp_path / "data.csv")
    db.write_csv(ds, path)
    return path


def _gamma_config(tmp_path, **overrides):
    doc = {
        "loss": {"name": "gamma", "nuisance": {"alpha": 5.0}},
        "response_col": "y",
        "total_rounds": 25,
        "params": [{"eta": 0.1, "max_depth": 3, "lambda_reg": 1.0,
                    "min_leaf_samples": 5}],
    }
    doc.update(overrides)
    path = str(tmp_path / "config.json")
    with open(path, "w") as fh:
        json.dump(doc, fh)
    return path


def test_train_eval_predict_pipeline(tmp_path, capsys):
    data = _gamma_csv(tmp_path)
    config = _gamma_config(tmp_path)
    model = str(tmp_path / "model.json")
    trace = str(tmp_path / "trace.csv")

    assert main(["train", "--data", data, "--config", config,
                 "--out", model, "--trace", trace]) == 0
    out = capsys.readouterr().out
    assert "final_train_nll=" in out

    trace_lines = open(trace).read().splitlines()
    assert trace_lines[0] == "round,active_mu,train_nll"
    assert len(trace_lines) - 1 == 25

    assert main(["eval", "--model", model, "--data", data]) == 0
    out = capsys.readouterr().out
    assert "total_nll=" in out and "mean_nll=" in out

    preds = str(tmp_path / "preds.csv")
    assert main(["predict", "--model", model, "--data", data,
                 "--out", preds]) == 0
    lines = open(preds).read().splitlines()
    assert lines[0] == "mu"
    assert len(lines) - 1 == 400
    assert all(float(v) > 0 for v in lines[1:10])


def test_train_with_holdout_prints_holdout_nll(tmp_path, capsys):
    data = _gamma_csv(tmp_path)
    config = _gamma_config(tmp_path, holdout_fraction=0.25, seed=3)
    model = str(tmp_path / "model.json")
    assert main(["train", "--data", data, "--config", config,
                 "--out", model]) == 0
    out = capsys.readouterr().out
    assert "holdout_nll=" in out


def test_config_validation_failures_exit_2(tmp_path, capsys):
    data = _gamma_csv(tmp_path)
    model = str(tmp_path / "model.json")

    bad = _gamma_config(tmp_path, params=[{"a": 0.0, "lambda_reg": 0.0}])
    assert main(["train", "--data", data, "--config", bad, "--out", model]) == 2

    unknown = _gamma_config(tmp_path, mystery_key=1)
    assert main(["train", "--data", data, "--config", unknown,
                 "--out", model]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_missing_response_column_exit_2(tmp_path, capsys):
    data = _gamma_csv(tmp_path)
    config = _gamma_config(tmp_path, response_col="claims")
    model = str(tmp_path / "model.json")
    assert main(["train", "--data", data, "--config", config,
                 "--out", model]) == 2
    assert "claims" in capsys.readouterr().err


def test_missing_data_file_exit_2(tmp_path, capsys):
    config = _gamma_config(tmp_path)
    assert main(["train", "--data", str(tmp_path / "nope.csv"),
                 "--config", config, "--out", str(tmp_path / "m.json")]) == 2
    assert "no such file" in capsys.readouterr().err


def test_predict_wrong_features_exit_2(tmp_path, capsys):
    data = _gamma_csv(tmp_path)
    config = _gamma_config(tmp_path)
    model = str(tmp_path / "model.json")
    assert main(["train", "--data", data, "--config", config,
                 "--out", model]) == 0
    capsys.readouterr()
    other = str(tmp_path / "other.csv")
    with open(other, "w") as fh:
        fh.write("z1,z2\n0.1,0.2\n")
    assert main(["predict", "--model", model, "--data", other,
                 "--out", str(tmp_path / "p.csv")]) == 2
    err = capsys.readouterr().err
    assert "x1" in err and "x2" in err


def test_gen_writes_expected_csv(tmp_path, capsys):
    params = str(tmp_path / "params.json")
    with open(params, "w") as fh:
        json.dump({
            "cuts": [[0.5], [0.5]],
            "cells": [[{"beta": 1.0, "gamma": 1.0}, {"beta": 1.0, "gamma": 3.0}],
                      [{"beta": 2.0, "gamma": 1.0}, {"beta": 2.0, "gamma": 3.0}]],
            "exposure_choices": [0.5, 1.0, 2.0],
        }, fh)
    out = str(tmp_path / "synth.csv")
    assert main(["gen", "--dist", "negbin", "--n", "200", "--seed", "7",
                 "--params", params, "--out", out]) == 0
    ds = db.load_csv(out, "y", exposure_col="exposure")
    assert ds.n_rows == 200
    assert set(np.unique(ds.exposure)) <= {0.5, 1.0, 2.0}

    # same flags, same bytes
    out2 = str(tmp_path / "synth2.csv")
    assert main(["gen", "--dist", "negbin", "--n", "200", "--seed", "7",
                 "--params", params, "--out", out2]) == 0
    assert open(out).read() == open(out2).read()


def test_check_loss_pass_and_fail(capsys):
    assert main(["check-loss", "--loss", "gamma", "--nuisance",
                 '{"alpha": 5}', "--y-samples", "0.1,4,100"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "single-minimum" in out

    assert main(["check-loss", "--loss", "squared_error",
                 "--y-samples", "1,2"]) == 0
    capsys.readouterr()

    assert main(["check-loss", "--loss", "double_well",
                 "--y-samples", "1"]) == 3
    out = capsys.readouterr().out
    assert "FAIL" in out and "minima near" in out


def test_check_loss_bad_flags(capsys):
    assert main(["check-loss", "--loss", "gamma", "--nuisance", "{",
                 "--y-samples", "1"]) == 2
    capsys.readouterr()
    assert main(["check-loss", "--loss", "gamma", "--nuisance",
                 '{"alpha": 5}', "--y-samples", "1,zap"]) == 2


def test_unknown_flag_errors():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--data", "x", "--config", "y", "--out", "z",
              "--bogus", "1"])
    assert exc.value.code == 2


def test_eval_bad_model_file_exit_2(tmp_path, capsys):
    bad = str(tmp_path / "bad.json")
    with open(bad, "w") as fh:
        fh.write('{"format_version": 42}')
    data = _gamma_csv(tmp_path)
    assert main(["eval", "--model", bad, "--data", data]) == 2
    assert "format_version" in capsys.readouterr().err


def test_eval_writes_json_report(tmp_path, capsys):
    data = _gamma_csv(tmp_path)
    config = _gamma_config(tmp_path)
    model = str(tmp_path / "model.json")
    report = str(tmp_path / "report.json")
    assert main(["train", "--data", data, "--config", config,
                 "--out", model]) == 0
    assert main(["eval", "--model", model, "--data", data,
                 "--out", report]) == 0
    doc = json.loads(open(report).read())
    assert set(doc) == {"model_id", "dataset_id", "n", "total_nll", "mean_nll"}
    assert doc["n"] == 400


def test_repo_example_configs_parse(tmp_path):
    import pathlib
    from distboost.cli import parse_run_config
    root = pathlib.Path(__file__).resolve().parent.parent / "configs"
    for name in ("gamma_severity.json", "zip_frequency.json",
                 "negbin_exposure.json"):
        doc = json.loads((root / name).read_text())
        config = parse_run_config(doc)
        assert config.total_rounds > 0

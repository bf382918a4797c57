"""CLI subcommands: artifacts, determinism, exit codes."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest


def run_cli(*args, env=None, cwd=None):
    full_env = dict(os.environ)
    if env:
        full_env.update(env)
    return subprocess.run(
        [sys.executable, "-m", "readmit.cli", *[str(a) for a in args]],
        capture_output=True, text=True, env=full_env, cwd=cwd,
    )


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Shared tiny dataset + selection + trained model for the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data.jsonl"
    r = run_cli("synth", "--out", data, "--patients", 80, "--positive-rate", 0.3,
                "--seed", 11)
    assert r.returncode == 0, r.stderr
    sel = root / "sel.json"
    r = run_cli("select-features", "--data", data, "--out", sel, "--top-k", 10,
                "--trees", 30, "--seed", 11)
    assert r.returncode == 0, r.stderr
    run_dir = root / "run"
    r = run_cli("train", "--data", data, "--out", run_dir, "--selection", sel,
                "--epochs", 2, "--seed", 11)
    assert r.returncode == 0, r.stderr
    return {"root": root, "data": data, "sel": sel, "run": run_dir}


# ---------------------------------------------------------------------------
# synth


def test_synth_writes_file_and_meta(workspace):
    data = workspace["data"]
    assert data.exists()
    meta = json.loads((workspace["root"] / "data.jsonl.meta.json").read_text())
    assert len(meta["informative_ehr_columns"]) == 5
    assert len(meta["informative_tokens"]) == 5
    assert "bias" in meta and "w_ehr" in meta


def test_synth_patient_count(workspace):
    lines = workspace["data"].read_text().strip().splitlines()
    patients = {json.loads(l)["patient_id"] for l in lines}
    assert len(patients) == 80


def test_synth_deterministic_bytes(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for out in (a, b):
        r = run_cli("synth", "--out", out, "--patients", 15, "--seed", 4)
        assert r.returncode == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.jsonl.meta.json").read_bytes() == \
           (tmp_path / "b.jsonl.meta.json").read_bytes()


def test_synth_positive_rate(tmp_path):
    out = tmp_path / "r.jsonl"
    r = run_cli("synth", "--out", out, "--patients", 300, "--positive-rate", 0.17,
                "--seed", 2)
    assert r.returncode == 0
    labels = [json.loads(l)["label"] for l in out.read_text().strip().splitlines()]
    assert 0.14 <= np.mean(labels) <= 0.20


# ---------------------------------------------------------------------------
# select-features


def test_selection_schema(workspace):
    sel = json.loads(workspace["sel"].read_text())
    assert sel["k"] == 10 and len(sel["indices"]) == 10
    assert len(sel["importances"]) == 50
    assert abs(sum(sel["importances"]) - 1.0) < 1e-9


def test_selection_recovers_planted_columns(workspace):
    sel = json.loads(workspace["sel"].read_text())
    meta = json.loads((workspace["root"] / "data.jsonl.meta.json").read_text())
    planted = set(meta["informative_ehr_columns"])
    assert len(planted & set(sel["indices"])) >= 4  # >= 80% of 5


def test_selection_top_k_too_large_fails_fast(workspace):
    r = run_cli("select-features", "--data", workspace["data"],
                "--out", workspace["root"] / "bad.json", "--top-k", 51)
    assert r.returncode == 2
    assert "top-k" in r.stderr


# ---------------------------------------------------------------------------
# train


def test_train_artifacts(workspace):
    run_dir = workspace["run"]
    for name in ("model.json", "history.csv", "splits.json", "report.json", "roc.csv"):
        assert (run_dir / name).exists(), name
    header, *rows = (run_dir / "history.csv").read_text().strip().splitlines()
    assert header == "epoch,train_loss,val_auc,lr,noise_ratio"
    assert len(rows) == 2


def test_train_single_epoch_history(tmp_path, workspace):
    out = tmp_path / "one"
    r = run_cli("train", "--data", workspace["data"], "--out", out,
                "--no-select", "--epochs", 1, "--seed", 1)
    assert r.returncode == 0, r.stderr
    rows = (out / "history.csv").read_text().strip().splitlines()
    assert len(rows) == 2  # header + 1 epoch


def test_train_deterministic_artifacts(tmp_path, workspace):
    outs = []
    for name in ("t1", "t2"):
        out = tmp_path / name
        r = run_cli("train", "--data", workspace["data"], "--out", out,
                    "--selection", workspace["sel"], "--epochs", 2, "--seed", 9)
        assert r.returncode == 0, r.stderr
        outs.append(out)
    assert (outs[0] / "model.json").read_bytes() == (outs[1] / "model.json").read_bytes()
    assert (outs[0] / "history.csv").read_bytes() == (outs[1] / "history.csv").read_bytes()


def test_train_requires_selection_or_no_select(workspace, tmp_path):
    r = run_cli("train", "--data", workspace["data"], "--out", tmp_path / "x",
                "--epochs", 1)
    assert r.returncode == 2
    assert "no-select" in r.stderr


def test_train_single_modality(tmp_path, workspace):
    out = tmp_path / "ehr_only"
    r = run_cli("train", "--data", workspace["data"], "--out", out, "--no-select",
                "--modalities", "ehr", "--epochs", 1, "--seed", 1)
    assert r.returncode == 0, r.stderr
    model = json.loads((out / "model.json").read_text())
    assert model["config"]["modalities"] == ["ehr"]


def test_train_missing_data_file(tmp_path):
    r = run_cli("train", "--data", tmp_path / "nope.jsonl", "--out", tmp_path / "o",
                "--no-select")
    assert r.returncode == 3


def test_train_config_file(tmp_path, workspace):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[train]\nepochs = 1\n\n[noise]\nkind = sinusoidal\n")
    out = tmp_path / "cfgrun"
    r = run_cli("train", "--data", workspace["data"], "--out", out, "--no-select",
                "--config", cfg, "--seed", 1)
    assert r.returncode == 0, r.stderr
    rows = (out / "history.csv").read_text().strip().splitlines()
    assert len(rows) == 2


def test_config_file_unknown_key_rejected(tmp_path, workspace):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[train]\nepohcs = 1\n")
    r = run_cli("train", "--data", workspace["data"], "--out", tmp_path / "o",
                "--no-select", "--config", cfg)
    assert r.returncode == 2
    assert "epohcs" in r.stderr


def test_pt_seed_env_fallback(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    r = run_cli("synth", "--out", a, "--patients", 10, "--seed", 77)
    assert r.returncode == 0
    r = run_cli("synth", "--out", b, "--patients", 10, env={"PT_SEED": "77"})
    assert r.returncode == 0
    assert a.read_bytes() == b.read_bytes()


# ---------------------------------------------------------------------------
# kfold


def test_kfold_members_and_report(tmp_path, workspace):
    out = tmp_path / "kf"
    r = run_cli("kfold", "--data", workspace["data"], "--out", out, "--k", 3,
                "--epochs", 1, "--seed", 11, "--trees", 20,
                "--holdout", workspace["data"])
    assert r.returncode == 0, r.stderr
    members = sorted(out.glob("member_*.json"))
    assert len(members) == 3
    report = json.loads((out / "ensemble.json").read_text())
    assert report["k"] == 3
    assert len(report["fold_val_aucs"]) == 3
    assert report["runtime_seconds"] > 0
    assert "ensemble_holdout_auc" in report


def test_kfold_k1_rejected(tmp_path, workspace):
    r = run_cli("kfold", "--data", workspace["data"], "--out", tmp_path / "kf1",
                "--k", 1, "--epochs", 1)
    assert r.returncode == 2


def test_kfold_jobs_deterministic_members(tmp_path, workspace):
    outs = []
    for name, jobs in (("j1", 1), ("j2", 2)):
        out = tmp_path / name
        r = run_cli("kfold", "--data", workspace["data"], "--out", out, "--k", 2,
                    "--epochs", 1, "--seed", 11, "--trees", 10, "--jobs", jobs)
        assert r.returncode == 0, r.stderr
        outs.append(out)
    for i in range(2):
        assert (outs[0] / f"member_{i:02d}.json").read_bytes() == \
               (outs[1] / f"member_{i:02d}.json").read_bytes()


def test_kfold_runtime_nondecreasing_in_k(tmp_path, workspace):
    runtimes = []
    for k in (2, 8):
        out = tmp_path / f"k{k}"
        r = run_cli("kfold", "--data", workspace["data"], "--out", out, "--k", k,
                    "--epochs", 1, "--seed", 11, "--trees", 10)
        assert r.returncode == 0, r.stderr
        runtimes.append(json.loads((out / "ensemble.json").read_text())["runtime_seconds"])
    assert runtimes[1] >= runtimes[0]


# ---------------------------------------------------------------------------
# eval


def test_eval_on_split_completes(tmp_path, workspace):
    out = tmp_path / "ev"
    r = run_cli("eval", "--model", workspace["run"] / "model.json",
                "--data", workspace["data"], "--out", out, "--split", "train")
    assert r.returncode == 0, r.stderr
    report = json.loads((out / "report.json").read_text())
    assert 0.0 <= report["auc"] <= 1.0
    assert (out / "roc.csv").read_text().startswith("fpr,tpr")


def test_eval_single_member_ensemble_equals_model(tmp_path, workspace):
    ens_dir = tmp_path / "ens1"
    ens_dir.mkdir()
    (ens_dir / "member_00.json").write_bytes(
        (workspace["run"] / "model.json").read_bytes())
    out_a, out_b = tmp_path / "ev_m", tmp_path / "ev_e"
    for model, out in ((workspace["run"] / "model.json", out_a), (ens_dir, out_b)):
        r = run_cli("eval", "--model", model, "--data", workspace["data"], "--out", out)
        assert r.returncode == 0, r.stderr
    auc_a = json.loads((out_a / "report.json").read_text())["auc"]
    auc_b = json.loads((out_b / "report.json").read_text())["auc"]
    assert auc_a == auc_b


def test_eval_tampered_model_clean_error(tmp_path, workspace):
    bad = tmp_path / "bad.json"
    blob = (workspace["run"] / "model.json").read_bytes()
    bad.write_bytes(blob[: len(blob) // 3])
    r = run_cli("eval", "--model", bad, "--data", workspace["data"],
                "--out", tmp_path / "ev")
    assert r.returncode == 3
    assert "model" in r.stderr


def test_eval_fingerprint_mismatch(tmp_path, workspace):
    other = tmp_path / "narrow.jsonl"
    r = run_cli("synth", "--out", other, "--patients", 12, "--d-ehr", 8,
                "--informative-ehr", 2, "--seed", 0)
    assert r.returncode == 0
    r = run_cli("eval", "--model", workspace["run"] / "model.json",
                "--data", other, "--out", tmp_path / "ev")
    assert r.returncode == 3
    assert "mismatch" in r.stderr


# ---------------------------------------------------------------------------
# exit codes


def test_io_error_exit_code(tmp_path):
    r = run_cli("synth", "--out", "/dev/null/nope/d.jsonl", "--patients", 5)
    assert r.returncode == 5


def test_numeric_error_exit_code(monkeypatch, tmp_path):
    import contextlib
    import io

    from readmit import cli
    from readmit.errors import NumericError

    def boom(cfg):
        raise NumericError("non-finite training loss at epoch 0, batch 0")

    monkeypatch.setattr(cli, "generate_synthetic", boom)
    err = io.StringIO()
    with contextlib.redirect_stderr(err):
        code = cli.main(["synth", "--out", str(tmp_path / "x.jsonl"), "--patients", "5"])
    assert code == 4
    assert "numeric failure" in err.getvalue()


# ---------------------------------------------------------------------------
# help


@pytest.mark.parametrize("sub", ["synth", "select-features", "train", "kfold", "eval"])
def test_help_exits_zero(sub):
    r = run_cli(sub, "--help")
    assert r.returncode == 0
    assert "--" in r.stdout


def test_top_level_help():
    r = run_cli("--help")
    assert r.returncode == 0
    for sub in ("synth", "select-features", "train", "kfold", "eval"):
        assert sub in r.stdout

import json
import os

import pytest

from torus_sns.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, main

FAST = ["--T", "0.05", "--dt", "0.01", "--seed", "2"]


def test_list_and_describe(capsys):
    assert main(["list"]) == EXIT_OK
    assert "blowup" in capsys.readouterr().out
    assert main(["describe", "tails"]) == EXIT_OK
    assert "substeps" in capsys.readouterr().out
    assert main(["describe", "dance"]) == EXIT_CONFIG
    assert main([]) == EXIT_CONFIG
    assert main(["--help"]) == EXIT_OK
    assert main(["dance"]) == EXIT_CONFIG


def test_validation_errors(capsys, tmp_path):
    assert main(["simulate", "--alpha", "0.4", "--print-config"]) == EXIT_CONFIG
    assert "error: alpha:" in capsys.readouterr().err
    assert main(["simulate", "--foo", "1"]) == EXIT_CONFIG
    assert "foo: unknown key" in capsys.readouterr().err
    assert main(["simulate", "--T"]) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    assert main(["simulate", "--config", str(bad)]) == EXIT_CONFIG
    other = tmp_path / "other.json"
    other.write_text('{"kind": "tails"}')
    assert main(["simulate", "--config", str(other)]) == EXIT_CONFIG


def test_missing_config_file_is_io_error(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "none.json")]) == EXIT_IO


def test_print_config_merges_file_and_overrides(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "simulate", "params": {"T": 0.2, "nu": 0.5}}))
    assert main(["simulate", "--config", str(cfg), "--nu=0.7", "--print-config"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["params"]["T"] == 0.2 and doc["params"]["nu"] == 0.7


def test_run_and_verify(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("TORUS_SNS_OUTPUT", str(tmp_path))
    assert main(["simulate", *FAST]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    run_dir = out[0]
    assert os.path.isdir(run_dir) and any("pass" in line and "finite" in line for line in out)
    assert main(["verify", run_dir]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "identical"
    assert main(["verify", str(tmp_path / "nowhere")]) == EXIT_IO


def test_verify_mismatch_exit_code(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("TORUS_SNS_OUTPUT", str(tmp_path))
    assert main(["simulate", *FAST]) == EXIT_OK
    run_dir = capsys.readouterr().out.splitlines()[0]
    man = json.loads(open(os.path.join(run_dir, "manifest.json")).read())
    man["outputs"]["trajectory.csv"] = "0" * 64
    with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
        json.dump(man, fh)
    assert main(["verify", run_dir]) == EXIT_NUMERIC
    assert "differs: trajectory.csv" in capsys.readouterr().out


def test_numeric_abort_exit_code(tmp_path, monkeypatch):
    from torus_sns import experiments
    from torus_sns.errors import NumericAbort

    def abort(cfg, out):
        raise NumericAbort("overflow")

    monkeypatch.setitem(experiments.RUNNERS, "simulate", abort)
    monkeypatch.setenv("TORUS_SNS_OUTPUT", str(tmp_path))
    assert main(["simulate", *FAST]) == EXIT_NUMERIC


def test_console_script_installed():
    import shutil
    import subprocess

    exe = shutil.which("torus-sns")
    if exe is None:
        pytest.skip("console script not on PATH")
    res = subprocess.run([exe, "list"], capture_output=True, text=True)
    assert res.returncode == 0 and "inequalities" in res.stdout

import csv
import subprocess
import sys

import numpy as np
import pytest

from habmec import cli, harness, oracle
from habmec.config import load_config

SMALL = ["--users", "3", "--habs", "2", "--instants", "10"]


def run(tmp_path, *args, out="out"):
    return cli.main([*args, "--out", str(tmp_path / out), "--quiet"])


def read(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def test_help_and_usage_errors(tmp_path, capsys):
    assert cli.main(["--help"]) == 0
    assert cli.main([]) == 1
    assert cli.main(["teleport"]) == 1
    assert cli.main(["simulate", "--users", "many"]) == 1
    assert "usage" in capsys.readouterr().err


def test_validation_errors_exit_one(tmp_path):
    assert run(tmp_path, "simulate", "--seed", "-1") == 1
    assert run(tmp_path, "simulate", "--users", "0") == 1
    bad = tmp_path / "bad.ini"
    bad.write_text("[scenario]\nplanets = 2\n", encoding="utf-8")
    assert run(tmp_path, "simulate", "--config", str(bad)) == 1
    # 3^20 associations trips the oracle guard
    assert run(tmp_path, "simulate", "--users", "20", "--instants", "1") == 1


def test_bad_trace_exits_one(tmp_path):
    trace = tmp_path / "trace.csv"
    trace.write_text("user_id,t,bits\n0,0,-4\n", encoding="utf-8")
    ini = tmp_path / "c.ini"
    ini.write_text(f"[traffic]\ntrace_path = {trace}\n", encoding="utf-8")
    assert run(tmp_path, "simulate", "--config", str(ini)) == 1


def test_internal_failure_exits_two(tmp_path, monkeypatch):
    def boom(*_):
        raise RuntimeError("broken")
    monkeypatch.setattr(cli, "_simulate", boom)
    assert run(tmp_path, "simulate") == 2


def test_config_writes_loadable_defaults(tmp_path):
    assert run(tmp_path, "config") == 0
    cfg = load_config(tmp_path / "out" / "habmec.ini")
    assert cfg.digest() == load_config().digest()


def test_outputs_stay_in_out_dir_and_carry_hash(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run(tmp_path, "oracle", *SMALL, "--seed", "2") == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["out"]
    digest = load_config(None, {"experiment": {"seed": 2}, "scenario": {"users": 3, "habs": 2},
                                "traffic": {"instants": 10}}).digest()
    for path in (tmp_path / "out").iterdir():
        raw = path.read_bytes()
        assert b"\r" not in raw
        rows = read(path)
        assert rows and all(r["config_hash"] == digest for r in rows)


def test_simulate_matches_direct_oracle(tmp_path):
    assert run(tmp_path, "simulate", "--users", "8", "--habs", "3", "--seed", "1") == 0
    rows = read(tmp_path / "out" / "simulate_utility.csv")
    cfg = load_config(None, {"experiment": {"seed": 1}, "scenario": {"users": 8, "habs": 3}})
    scenario = harness.build_instance(cfg, 1)
    assert len(rows) == cfg["traffic"]["instants"]
    for t in (0, 17, 59):
        assert float(rows[t]["utility"]) == oracle.exhaustive_association(scenario, t).utility
    decisions = read(tmp_path / "out" / "simulate_decisions.csv")
    assert len(decisions) == 8 * 60


@pytest.mark.parametrize("args", [["train", "--seed", "7"], ["simulate", "--seed", "1"]])
def test_runs_are_byte_identical(tmp_path, args):
    assert run(tmp_path, *args, out="a") == 0
    assert run(tmp_path, *args, out="b") == 0
    first = sorted((tmp_path / "a").iterdir())
    second = sorted((tmp_path / "b").iterdir())
    assert [p.name for p in first] == [p.name for p in second]
    for a, b in zip(first, second):
        assert a.read_bytes() == b.read_bytes()


def test_train_trace_converges(tmp_path):
    assert run(tmp_path, "train", *SMALL, "--seed", "3") == 0
    rows = read(tmp_path / "out" / "train_trace.csv")
    last = {}
    for r in rows:
        last[r["user"]] = r
    assert len(last) == 3
    assert all(float(r["gap"]) < 1e-6 for r in last.values())
    assert all(float(r["descent_residual"]) <= 1e-9 for r in rows)
    models = read(tmp_path / "out" / "train_models.csv")
    assert len(models) == 3 * 2
    omega = np.array([[float(r["omega_0"]), float(r["omega_1"])] for r in models[:2]])
    assert np.trace(omega) == pytest.approx(1.0)


def test_evaluate_and_sweep(tmp_path):
    assert run(tmp_path, "evaluate", *SMALL, "--reps", "2") == 0
    rows = read(tmp_path / "out" / "evaluate_rows.csv")
    assert {r["method"] for r in rows} == {"fl", "local", "global", "oracle"}
    assert len(read(tmp_path / "out" / "evaluate_summary.csv")) == 4
    assert run(tmp_path, "evaluate", "--sweep", "--users", "2", "--habs", "2", "--reps", "1") == 0
    summary = read(tmp_path / "out" / "sweep_summary.csv")
    assert sorted({int(r["samples"]) for r in summary}) == [30, 60, 90, 120, 150]


def test_verify_passes(tmp_path):
    assert run(tmp_path, "verify") == 0
    rows = read(tmp_path / "out" / "verify.csv")
    assert rows and all(r["ok"] == "True" for r in rows)


def test_module_entry_point(tmp_path):
    done = subprocess.run([sys.executable, "-m", "habmec", "config", "--out", str(tmp_path), "--quiet"],
                          capture_output=True, text=True)
    assert done.returncode == 0, done.stderr
    assert (tmp_path / "habmec.ini").exists()

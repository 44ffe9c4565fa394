import json
import subprocess
import sys

import pytest

from eprcoinc.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main

CFG = {"duration": 200_000_000_000, "pair_rate": 50000, "background_rate_a": 20000,
       "background_rate_b": 15000, "seed": 1}
BG = {"duration": 200_000_000_000, "pair_rate": 0, "background_rate_a": 20000,
      "background_rate_b": 15000, "seed": 1}


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(CFG))
    return p


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


def test_synth_then_analyse_files(tmp_path, cfg, capsys):
    logs = tmp_path / "logs"
    code, _ = run(capsys, "synth", "--synth", cfg, "--out", logs)
    assert code == EXIT_OK
    assert {p.name for p in logs.iterdir()} == {"alice.eprlog", "bob.eprlog", "truth.csv", "synth.json"}
    out = tmp_path / "v"
    code, io = run(capsys, "validate", "--alice", logs / "alice.eprlog", "--bob", logs / "bob.eprlog", "--out", out)
    assert code == EXIT_OK and json.loads(io.out)["ok"]
    code, io = run(capsys, "coinc", "--alice", logs / "alice.eprlog", "--bob", logs / "bob.eprlog",
                   "--out", out, "--preset", "wjswz")
    assert code == EXIT_OK
    rep = json.loads(io.out)
    assert rep["window"]["u_ns"] == 1.8 and rep["coincidences"] > 1000
    assert (out / "coincidences.csv").exists() and (out / "cells.json").exists()


def test_binary_synth_round_trip(tmp_path, cfg, capsys):
    logs = tmp_path / "b"
    assert run(capsys, "synth", "--synth", cfg, "--out", logs, "--format", "binary")[0] == EXIT_OK
    code, io = run(capsys, "bell", "--alice", logs / "alice.eprbin", "--bob", logs / "bob.eprbin",
                   "--format", "binary", "--out", tmp_path / "o")
    assert code == EXIT_OK
    assert json.loads(io.out)["chsh"]["inequality_2a"]["violated"] is True


def test_analysis_commands_on_synth(tmp_path, cfg, capsys):
    for cmd in ("strips", "window", "bell", "nosignal", "fairsample"):
        code, io = run(capsys, cmd, "--synth", cfg, "--out", tmp_path / cmd)
        assert code == EXIT_OK, (cmd, io.err)
        rep = json.loads(io.out)
        assert rep["command"] == cmd and rep["seed"] == 1 and "rng" in rep
        assert (tmp_path / cmd / f"{cmd}.json").read_text() == io.out
    win = json.loads((tmp_path / "window" / "window.json").read_text())["suggestion"]
    assert win["u_ns"] <= 3.5 <= win["v_ns"]


def test_full_is_deterministic(tmp_path, cfg, capsys):
    argv = ("full", "--synth", cfg, "--out", tmp_path / "r", "--grid-bins", "64", "--auto")
    code, first = run(capsys, *argv)
    assert code == EXIT_OK, first.err
    files = {p.name: p.read_bytes() for p in (tmp_path / "r").iterdir()}
    assert {"full.json", "strips.csv", "coincidences.csv", "delay_fit.csv", "delay_gA_0_0.csv"} <= set(files)
    code, second = run(capsys, *argv)
    assert second.out == first.out
    assert files == {p.name: p.read_bytes() for p in (tmp_path / "r").iterdir()}
    rep = json.loads(first.out)
    assert rep["delay_fit"]["converged"]


def test_seed_override_changes_output(tmp_path, cfg, capsys):
    _, a = run(capsys, "coinc", "--synth", cfg, "--out", tmp_path / "a")
    _, b = run(capsys, "coinc", "--synth", cfg, "--seed", "2", "--out", tmp_path / "a")
    assert json.loads(a.out)["cells"] != json.loads(b.out)["cells"]


def test_exit_codes(tmp_path, cfg, capsys):
    assert run(capsys)[0] == EXIT_USAGE
    assert run(capsys, "bell", "--out", tmp_path)[0] == EXIT_USAGE
    assert run(capsys, "bell", "--synth", cfg, "--u", "1", "--out", tmp_path)[0] == EXIT_USAGE
    assert run(capsys, "bell", "--synth", cfg, "--u", "1.8", "--v", "5.8001", "--out", tmp_path)[0] == EXIT_USAGE
    assert run(capsys, "bell", "--synth", cfg, "--preset", "wide", "--auto", "--out", tmp_path)[0] == EXIT_USAGE
    assert run(capsys, "bell", "--synth", tmp_path / "missing.json", "--out", tmp_path)[0] == EXIT_DATA
    bad = tmp_path / "bad.eprlog"
    bad.write_text("10\t0\t0\n5\t0\t0\n")
    code, io = run(capsys, "coinc", "--alice", bad, "--bob", bad, "--out", tmp_path)
    assert code == EXIT_DATA and "line 2" in io.err
    bg = tmp_path / "bg.json"
    bg.write_text(json.dumps(BG))
    assert run(capsys, "window", "--synth", bg, "--out", tmp_path)[0] == EXIT_DATA


def test_console_script_entry():
    r = subprocess.run([sys.executable, "-m", "eprcoinc.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "eprcoinc" in r.stdout

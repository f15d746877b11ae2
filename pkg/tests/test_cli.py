import json
from pathlib import Path

import numpy as np
import pytest

from gridfleet import bundled_scenario_path
from gridfleet.cli import main


@pytest.fixture(scope="module")
def small_path():
    return str(bundled_scenario_path("small"))


def run(args):
    return main(args)


def test_missing_scenario_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc_info:
        run(["solve"])
    assert exc_info.value.code != 0


def test_unknown_scenario_file(tmp_path):
    assert run(["solve", "--scenario", str(tmp_path / "nope.json"),
                "--out", str(tmp_path / "o")]) != 0


def test_synth_then_solve_roundtrip(tmp_path):
    out = tmp_path / "s.json"
    assert run(["synth", "--seed", "0", "--zones", "3", "--buses", "2",
                "--out", str(out), "--fleet", "20", "--horizon", "8"]) == 0
    assert out.exists()
    rundir = tmp_path / "run"
    assert run(["solve", "--scenario", str(out), "--out", str(rundir)]) == 0
    for name in ("lmp.csv", "charging.csv", "delivery.csv", "trace_outer.csv",
                 "run_manifest.json"):
        assert (rundir / name).exists()


def test_solve_outputs_and_manifest(small_path, tmp_path):
    rundir = tmp_path / "run1"
    assert run(["solve", "--scenario", small_path, "--out", str(rundir),
                "--seed", "3", "--dump-mdp"]) == 0
    lmp_lines = (rundir / "lmp.csv").read_text().splitlines()
    assert lmp_lines[0] == "t,bus,price_baseline,price_equilibrium"
    assert len(lmp_lines) == 1 + 8 * 3  # T x load buses
    manifest = json.loads((rundir / "run_manifest.json").read_text())
    assert manifest["tool"] == "gridfleet"
    assert manifest["converged"] is True
    assert manifest["config"]["seed"] == 3
    assert "config_hash" in manifest and len(manifest["config_hash"]) == 64
    assert manifest["residuals"]["outer"] <= 1e-4
    assert (rundir / "mdp_dump.csv").exists()
    assert (rundir / "trace_inner_0.csv").exists()


def test_solve_deterministic_outputs(small_path, tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert run(["solve", "--scenario", small_path, "--out", str(a)]) == 0
    assert run(["solve", "--scenario", small_path, "--out", str(b)]) == 0
    for name in ("lmp.csv", "charging.csv", "delivery.csv", "trace_outer.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_fleet_zero_matches_baseline_files(small_path, tmp_path):
    rundir = tmp_path / "zero"
    assert run(["solve", "--scenario", small_path, "--out", str(rundir),
                "--fleet", "0"]) == 0
    rows = (rundir / "lmp.csv").read_text().splitlines()[1:]
    for row in rows:
        _, _, pb, pe = row.split(",")
        assert pb == pe
    charging = (rundir / "charging.csv").read_text().splitlines()[1:]
    assert all(row.split(",")[3] == "0" for row in charging)


def test_baseline_command(small_path, tmp_path):
    rundir = tmp_path / "base"
    assert run(["baseline", "--scenario", small_path, "--out", str(rundir)]) == 0
    lines = (rundir / "lmp_baseline.csv").read_text().splitlines()
    assert lines[0] == "t,bus,price"
    assert len(lines) == 1 + 8 * 3


def test_opf_command(small_path, tmp_path):
    rundir = tmp_path / "opf"
    assert run(["opf", "--scenario", small_path, "--out", str(rundir),
                "--t", "0"]) == 0
    lines = (rundir / "opf_t0.csv").read_text().splitlines()
    assert lines[0] == "bus,kind,g,theta,lmp,binding"
    assert run(["opf", "--scenario", small_path, "--out", str(rundir),
                "--t", "99"]) != 0


def test_mdp_command(small_path, tmp_path, capsys):
    rewards = tmp_path / "r.csv"
    rewards.write_text("t,zone,reward\n0,2,2.5\n1,3,1.0\n")
    rundir = tmp_path / "mdp"
    assert run(["mdp", "--scenario", small_path, "--out", str(rundir),
                "--rewards", str(rewards)]) == 0
    out = capsys.readouterr().out
    assert "V(s0) =" in out
    dump = (rundir / "mdp_dump.csv").read_text().splitlines()
    assert dump[0].startswith("t,zone,soc,")
    manifest = json.loads((rundir / "run_manifest.json").read_text())
    assert manifest["residuals"]["bellman"] <= 1e-10


def test_mdp_command_with_prices(small_path, tmp_path):
    rundir = tmp_path / "solve_for_prices"
    assert run(["solve", "--scenario", small_path, "--out", str(rundir)]) == 0
    rundir2 = tmp_path / "mdp2"
    assert run(["mdp", "--scenario", small_path, "--out", str(rundir2),
                "--prices", str(rundir / "lmp.csv")]) == 0


def test_nonconvergence_exits_nonzero_with_partial_traces(small_path, tmp_path):
    rundir = tmp_path / "hard"
    code = run(["solve", "--scenario", small_path, "--out", str(rundir),
                "--tol-outer", "1e-15"])
    assert code != 0
    manifest = json.loads((rundir / "run_manifest.json").read_text())
    assert manifest["converged"] is False
    assert (rundir / "trace_outer.csv").exists()

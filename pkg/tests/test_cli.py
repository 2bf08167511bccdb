import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from csbohm import cli
from csbohm.scenarios import SCENARIOS

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(argv, capsys):
    code = cli.main(argv)
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def test_scenario_list(capsys):
    code, out, _ = run(["scenario", "list"], capsys)
    assert code == 0
    assert out.split() == list(SCENARIOS)


def test_evolve_writes_records_amplitude_and_manifest(tmp_path, capsys):
    code, out, _ = run(["evolve", "--config", str(CONFIGS / "free_gaussian.json"), "--out", str(tmp_path)], capsys)
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "amplitude.csv").open()))
    assert len(rows) == 21
    a = np.array([complex(float(r["re_a"]), float(r["im_a"])) for r in rows])
    assert np.max(np.abs(a - a[0])) < 1e-12
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["command"] == "evolve" and man["passed"]
    assert (tmp_path / "initial").exists() and (tmp_path / "final").exists()


def test_trajectories_command(tmp_path, capsys):
    code, out, _ = run(["trajectories", "--config", str(CONFIGS / "free_gaussian.json"), "--out", str(tmp_path)],
                       capsys)
    assert code == 0
    assert "9/9 lines" in out
    assert (tmp_path / "manifest.json").is_file()


def test_leak_warning_is_recorded_in_manifest(tmp_path, capsys):
    code, _, err = run(["evolve", "--config", str(CONFIGS / "leaky_packet.json"), "--out", str(tmp_path)], capsys)
    assert code == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert any(w["category"] == "BoundaryLeakWarning" for w in man["warnings"])
    assert "BoundaryLeakWarning" in err


def test_numerical_failure_exits_3(tmp_path, capsys):
    # A final packet far from the initial one leaves no overlap to normalize by.
    code, _, err = run(["evolve", "--config", str(CONFIGS / "free_gaussian.json"), "--out", str(tmp_path),
                        "--set", "final.center=25", "--set", "final.width=0.3"], capsys)
    assert code == 3
    assert "numerical failure" in err


@pytest.mark.parametrize(
    "argv",
    [
        ["scenario", "run", "no-such-scenario"],
        ["verify", "no-such-suite"],
        ["evolve"],
        ["frobnicate"],
        ["scenario", "run"],
    ],
)
def test_config_and_usage_errors_exit_2(argv, tmp_path, capsys):
    code, _, err = run(argv + ["--out", str(tmp_path)] if argv[0] != "frobnicate" else argv, capsys)
    assert code == 2
    assert "csbohm:" in err


def test_malformed_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"grid": {"n_points": 64,,}}')
    code, _, err = run(["evolve", "--config", str(bad), "--out", str(tmp_path / "o")], capsys)
    assert code == 2
    assert "line 1" in err and "column" in err


def test_bad_thread_count_exits_2(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("CSBOHM_THREADS", "many")
    code, _, _ = run(["scenario", "run", "retrocausal-velocity", "--out", str(tmp_path)], capsys)
    assert code == 2


def test_failed_check_exits_1(tmp_path, capsys):
    # At this step size the residual no longer shrinks fourfold per halving.
    code, out, _ = run(["verify", "identities", "--out", str(tmp_path), "--set", "continuity.dt=2.0"], capsys)
    assert code == 1
    assert "FAIL  continuity_second_order" in out
    res = json.loads((tmp_path / "verify.json").read_text())
    assert not res["passed"]


def test_environment_sets_output_dir_and_threads(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("CSBOHM_OUT", str(tmp_path / "env"))
    monkeypatch.setenv("CSBOHM_THREADS", "2")
    code, out, _ = run(["epr", "--set", "params.samples=5000", "--set", "params.lines=4"], capsys)
    assert (tmp_path / "env" / "report.json").is_file()
    assert "PASS  epr-zigzag: reduction_time_independent" in out
    assert code in (0, 1)


def test_scenario_run_matches_library_hash(tmp_path, capsys, scenario_report):
    code, _, _ = run(["scenario", "run", "measurement-limit", "--out", str(tmp_path)], capsys)
    assert code == 0
    rep, _ = scenario_report("measurement-limit")
    assert json.loads((tmp_path / "report.json").read_text())["config_hash"] == rep.config_hash


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "csbohm", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("csbohm ")

import csv
import json
import os

import pytest

from conftest import HYPERBOLIC_SCENARIO, string_scenario
from data_access import RunsDatabase
from projectors import Mode
from scenario_config import load_config
from utils import ConfigError
from wavesplit import build_manifest, gnuplot_script, main, parse_values, resolve_output_dir, sweep_csv


@pytest.fixture(autouse=True)
def no_ledger(monkeypatch):
    monkeypatch.delenv("RUNS_DB_PATH", raising=False)


def read(path):
    with open(path, "r", encoding="utf-8") as handle:
        return handle.read()


def run(command, config_path, out_dir, *extra):
    return main([command, "--config", config_path, "--out", str(out_dir), *extra])


def test_simulate_writes_frames_and_norms(write_scenario, tmp_path):
    config_path = write_scenario(string_scenario())
    out_dir = tmp_path / "sim"
    assert run("simulate", config_path, out_dir) == 0
    names = sorted(os.listdir(out_dir))
    assert [name for name in names if name.startswith("state_")] == [f"state_{i:02d}.csv" for i in range(11)]
    norms = read(out_dir / "norms.csv").splitlines()
    assert norms[0] == "t,norm"
    assert len(norms) == 12
    first = read(out_dir / "state_00.csv").splitlines()
    assert first[0] == "x,v,w"
    assert len(first) == 1025
    manifest = json.loads(read(out_dir / "manifest.json"))
    assert manifest["command"] == "simulate"
    assert manifest["config"]["grid"]["points"] == 1024
    assert "manifest.json" in manifest["files"]


def test_simulate_is_byte_identical_on_rerun(write_scenario, tmp_path):
    config_path = write_scenario(string_scenario())
    assert run("simulate", config_path, tmp_path / "a") == 0
    assert run("simulate", config_path, tmp_path / "b") == 0
    for name in os.listdir(tmp_path / "a"):
        assert read(tmp_path / "a" / name) == read(tmp_path / "b" / name), name


def test_invalid_width_exits_with_config_error(write_scenario, tmp_path):
    config_path = write_scenario(string_scenario(width=0.1))
    out_dir = tmp_path / "never"
    assert run("simulate", config_path, out_dir) == 2
    assert not out_dir.exists()


def test_missing_config_file_exits_with_config_error(tmp_path):
    assert run("simulate", str(tmp_path / "absent.toml"), tmp_path / "out") == 2


def test_calibrate_rejects_left_pulses(write_scenario, tmp_path):
    config_path = write_scenario(string_scenario(with_left=True))
    assert run("calibrate", config_path, tmp_path / "cal", "--trials", "10") == 2
    assert not (tmp_path / "cal").exists()


def test_calibrate_rejects_too_few_trials(write_scenario, tmp_path):
    config_path = write_scenario(string_scenario())
    assert run("calibrate", config_path, tmp_path / "cal", "--trials", "3") == 2


def test_noiseless_direct_calibration_is_tiny(write_scenario, tmp_path):
    config_path = write_scenario(string_scenario(sampler="direct"))
    assert run("calibrate", config_path, tmp_path / "cal", "--trials", "10") == 0
    calibration = json.loads(read(tmp_path / "cal" / "calibration.json"))
    assert calibration["delta"] <= 1e-10
    assert calibration["trials"] == 10
    assert calibration["stencil"]["sampler"] == "direct"


def test_diagnose_without_calibration_exits_with_config_error(write_scenario, tmp_path):
    config_path = write_scenario(string_scenario())
    assert run("diagnose", config_path, tmp_path / "diag") == 2


def test_diagnose_places_the_source(write_scenario, tmp_path):
    config_path = write_scenario(string_scenario(emit_plots=True))
    out_dir = tmp_path / "standard"
    assert run("calibrate", config_path, out_dir, "--trials", "10") == 0
    assert run("diagnose", config_path, out_dir) == 0
    report = json.loads(read(out_dir / "report.json"))
    assert report["detected"] == ["right"]
    assert report["source_position"] == pytest.approx(-5.0, abs=0.05)
    assert report["error_budget"]["from_arrival"] == pytest.approx(0.05)
    for name in ("waveform.csv", "series.csv", "projections.csv", "reconstruction.csv", "plot.gp"):
        assert (out_dir / name).exists(), name
    assert read(out_dir / "reconstruction.csv").splitlines()[0] == "t,right,right_truth"
    first_report = read(out_dir / "report.json")
    assert run("diagnose", config_path, out_dir) == 0
    assert read(out_dir / "report.json") == first_report


def test_diagnose_rejects_mismatched_calibration(write_scenario, tmp_path):
    direct_path = write_scenario(string_scenario(sampler="direct"), "direct.toml")
    stencil_path = write_scenario(string_scenario(), "stencil.toml")
    assert run("calibrate", direct_path, tmp_path / "cal", "--trials", "10") == 0
    calibration = str(tmp_path / "cal" / "calibration.json")
    assert run("diagnose", stencil_path, tmp_path / "diag", "--calibration", calibration) == 3


def test_sweep_rejects_bad_arguments(write_scenario, tmp_path):
    config_path = write_scenario(HYPERBOLIC_SCENARIO)
    assert run("sweep", config_path, tmp_path / "s", "--axis", "epsilon", "--values", "") == 2
    assert run("sweep", config_path, tmp_path / "s", "--axis", "colour", "--values", "1") == 2
    assert run("sweep", config_path, tmp_path / "s", "--values", "0.1") == 2
    assert run("sweep", config_path, tmp_path / "s", "--axis", "delta1", "--values", "0.1") == 2
    assert not (tmp_path / "s").exists()


def test_epsilon_sweep_commutator_is_first_order(write_scenario, tmp_path):
    config_path = write_scenario(HYPERBOLIC_SCENARIO)
    out_dir = tmp_path / "sweep"
    assert run("sweep", config_path, out_dir, "--axis", "epsilon", "--values", "0.2,0.1,0.05,0.025") == 0
    with open(out_dir / "sweep.csv", newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert [float(row["epsilon"]) for row in rows] == [0.2, 0.1, 0.05, 0.025]
    assert rows[0]["commutator_norm_ratio"] == ""
    for row in rows[1:]:
        assert float(row["commutator_norm_ratio"]) == pytest.approx(2.0, abs=0.3)
        assert float(row["idempotency"]) <= 1e-9
    for index in range(4):
        metrics = json.loads(read(out_dir / f"point_{index}" / "metrics.json"))
        assert metrics["axis"] == "epsilon"
    manifest = json.loads(read(out_dir / "manifest.json"))
    assert manifest["arguments"]["values"] == [0.2, 0.1, 0.05, 0.025]


def test_ledger_records_runs(write_scenario, tmp_path, monkeypatch):
    db_path = str(tmp_path / "ledger" / "runs.db")
    monkeypatch.setenv("RUNS_DB_PATH", db_path)
    config_path = write_scenario(string_scenario(with_left=True))
    assert run("simulate", config_path, tmp_path / "sim") == 0
    assert run("calibrate", config_path, tmp_path / "cal", "--trials", "10") == 2
    db = RunsDatabase(db_path)
    runs = db.get_recent_runs()
    assert [row["command"] for row in runs] == ["calibrate", "simulate"]
    assert runs[0]["status"] == "failed" and runs[0]["exit_code"] == 2
    assert db.count_runs("ok") == 1
    assert runs[0]["config_digest"] == runs[1]["config_digest"]


def test_ledger_records_sweep_points(write_scenario, tmp_path, monkeypatch):
    db_path = str(tmp_path / "runs.db")
    monkeypatch.setenv("RUNS_DB_PATH", db_path)
    config_path = write_scenario(HYPERBOLIC_SCENARIO)
    assert run("sweep", config_path, tmp_path / "sweep", "--axis", "epsilon", "--values", "0.1,0.05") == 0
    db = RunsDatabase(db_path)
    run_id = db.get_recent_runs(limit=1)[0]["id"]
    points = db.get_sweep_points(run_id)
    assert [point["value"] for point in points] == [0.1, 0.05]
    assert "commutator_norm" in json.loads(points[0]["metrics"])


def test_resolve_output_dir_precedence(write_scenario, monkeypatch):
    config = load_config(write_scenario(string_scenario(name="named")))
    monkeypatch.setenv("WAVESPLIT_OUTPUT_DIR", "/data/runs")
    assert resolve_output_dir(config, "explicit") == "explicit"
    assert resolve_output_dir(config, None) == os.path.join("/data/runs", "named")


def test_manifest_lists_files_and_tolerances(write_scenario):
    config = load_config(write_scenario(string_scenario()))
    manifest = build_manifest(config, "simulate", {}, ["b.csv", "a.csv"])
    assert manifest["files"] == ["a.csv", "b.csv"]
    assert manifest["tolerances"]["guard_widths"] == 6.0
    assert len(manifest["config_digest"]) == 64


def test_parse_values_and_sweep_csv():
    assert parse_values("0.1, 0.2,") == [0.1, 0.2]
    with pytest.raises(ConfigError):
        parse_values("0.1,abc")
    with pytest.raises(ConfigError):
        parse_values(None)
    text = sweep_csv("dt", [0.2, 0.1], [{"residual": 4.0}, {"residual": 2.0}])
    assert text.splitlines() == ["dt,residual,residual_ratio", "0.20000000000000001,4,", "0.10000000000000001,2,2"]


def test_gnuplot_script_references_reconstruction():
    script = gnuplot_script([Mode.RIGHT, Mode.LEFT], 2)
    assert "set output 'reconstruction.png'" in script
    assert "using 1:4 with lines" in script
    assert "reconstruction" not in gnuplot_script([], 2)


def test_diagnose_records_closed_loop_errors(write_scenario, tmp_path, monkeypatch):
    db_path = str(tmp_path / "runs.db")
    monkeypatch.setenv("RUNS_DB_PATH", db_path)
    config_path = write_scenario(string_scenario())
    out_dir = tmp_path / "standard"
    assert run("calibrate", config_path, out_dir, "--trials", "10") == 0
    assert run("diagnose", config_path, out_dir) == 0
    db = RunsDatabase(db_path)
    latest = db.get_run(db.get_recent_runs(limit=1)[0]["id"])
    assert latest["command"] == "diagnose"
    loop = json.loads(latest["summary"])["closed_loop"]
    assert loop["loop_error"] <= 2.0 * loop["reconstruction_error"]

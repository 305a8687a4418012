import configparser
import json
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

import switchpoint.workers.jobs as jobs
from switchpoint import configuration
from switchpoint.pipeline.main import run

PRESET = Path(__file__).resolve().parents[1] / "assets" / "config.ini"


def write_config(tmp_path, overrides=None):
    """Copy the shipped preset with ``{(section, key): value}`` overrides into ``tmp_path``."""
    parser = configparser.ConfigParser()
    parser.read(PRESET)
    changes = {
        ("DIFFUSION", "r_per_s"): "0.0005",
        ("CALIBRATION", "apply"): "false",
        ("GRIDS", "levels"): "3",
        ("SIMULATION", "n_paths"): "4",
        ("SIMULATION", "batch_size"): "2",
        ("SIMULATION", "horizon_tolerance"): "0.5",
        ("EMPIRICAL", "levels"): "21",
        ("OUTPUT", "directory"): str(tmp_path / "output"),
    }
    changes.update(overrides or {})
    for (section, key), value in changes.items():
        parser.set(section, key, value)
    path = tmp_path / "run.ini"
    with open(path, "w") as f:
        parser.write(f)
    return path


def stderr_payload(capsys) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.fixture(autouse=True)
def single_process(monkeypatch):
    monkeypatch.delenv("SWITCHPOINT_THREADS", raising=False)


def test_empty_config_lists_every_section(tmp_path, capsys):
    path = tmp_path / "empty.ini"
    path.write_text("")
    assert run(["solve", "--config", str(path)]) == 1
    payload = stderr_payload(capsys)
    assert payload["status"] == "ERROR"
    assert payload["error"] == "ConfigValidationError"
    assert len(payload["details"]["errors"]) >= 10


def test_all_bad_fields_are_reported(tmp_path, capsys):
    path = write_config(
        tmp_path,
        {
            ("DIFFUSION", "kappa_per_s"): "-1",
            ("OUTPUT", "format"): "xml",
            ("GRIDS", "levels"): "0",
        },
    )
    assert run(["solve", "--config", str(path)]) == 1
    errors = stderr_payload(capsys)["details"]["errors"]
    assert any("kappa_per_s" in e for e in errors)
    assert any("format" in e for e in errors)
    assert any("levels" in e for e in errors)


def test_missing_config_file(tmp_path, capsys):
    assert run(["solve", "--config", str(tmp_path / "nowhere.ini")]) == 1
    assert stderr_payload(capsys)["error"] == "ConfigValidationError"


def test_solve_writes_pair(tmp_path):
    out = tmp_path / "solve"
    assert run(["solve", "--config", str(write_config(tmp_path)), "--out", str(out), "--threads", "1"]) == 0
    data = json.loads((out / "solve.json").read_text())
    assert data["a_mw"] < 5000.0 < data["b_mw"]
    assert max(data["residual_psi"], data["residual_phi"]) < 1e-7
    assert data["_meta"]["task"] == "solve"
    assert data["_meta"]["r_per_s"] == pytest.approx(0.0005)
    assert len(data["_meta"]["config_digest"]) == 64


def test_environment_names_the_default_config(tmp_path, monkeypatch):
    monkeypatch.setenv("SWITCHPOINT_CONFIG", str(write_config(tmp_path)))
    assert configuration.config_file == tmp_path / "run.ini"
    out = tmp_path / "solve"
    assert run(["solve", "--out", str(out), "--threads", "1"]) == 0
    assert (out / "solve.json").exists()


def test_schedule_csv_is_reproducible(tmp_path):
    config = str(write_config(tmp_path))
    first, second = tmp_path / "first", tmp_path / "second"
    assert run(["schedule", "--config", config, "--out", str(first), "--threads", "1"]) == 0
    assert run(["schedule", "--config", config, "--out", str(second), "--threads", "1"]) == 0

    text = (first / "schedule.csv").read_text()
    lines = text.splitlines()
    assert lines[0].startswith("# version: ")
    header = next(line for line in lines if not line.startswith("#"))
    assert header == "i,z_i,a_i,b_i_plus_1,A_i,B_i"
    assert "\n0,0.000000," in text
    assert text == (second / "schedule.csv").read_text()

    schedule = json.loads((first / "schedule.json").read_text())
    assert len(schedule["a"]) == 3
    assert np.all(np.diff(schedule["a"]) < 0)


def test_backtest_schedule_on_simulated_paths(tmp_path):
    config = str(write_config(tmp_path))
    assert run(["schedule", "--config", config, "--out", str(tmp_path / "schedule"), "--threads", "1"]) == 0
    out = tmp_path / "backtest"
    code = run(
        [
            "backtest",
            "--config",
            config,
            "--out",
            str(out),
            "--seed",
            "9",
            "--schedule",
            str(tmp_path / "schedule" / "schedule.json"),
        ]
    )
    assert code == 0
    report = json.loads((out / "backtest.json").read_text())
    assert report["n_paths"] == 4
    assert report["seed"] == 9
    assert report["source"] == "simulated"
    assert report["_meta"]["r_per_s"] == pytest.approx(0.0005)


def test_backtest_uses_the_schedule_rate(tmp_path):
    built = str(write_config(tmp_path))
    assert run(["schedule", "--config", built, "--out", str(tmp_path / "schedule"), "--threads", "1"]) == 0
    schedule = json.loads((tmp_path / "schedule" / "schedule.json").read_text())
    assert schedule["r_per_s"] == pytest.approx(0.0005)

    other = tmp_path / "other"
    other.mkdir()
    config = str(write_config(other, {("DIFFUSION", "r_per_s"): "0.001"}))
    out = tmp_path / "backtest"
    schedule_path = str(tmp_path / "schedule" / "schedule.json")
    assert run(["backtest", "--config", config, "--out", str(out), "--schedule", schedule_path]) == 0
    report = json.loads((out / "backtest.json").read_text())
    assert report["_meta"]["r_per_s"] == pytest.approx(0.0005)


def test_backtest_calibrates_when_schedule_has_no_rate(tmp_path, monkeypatch):
    monkeypatch.setattr(jobs, "_calibrate", lambda config: SimpleNamespace(r=0.0007))
    path = tmp_path / "bare.json"
    path.write_text(json.dumps({"z_grid": [0.0, 1.0], "a": [-7000.0], "b": [7500.0], "A": [0.0, 0.0], "B": [0.0, 0.0]}))
    config = str(write_config(tmp_path, {("CALIBRATION", "apply"): "true"}))
    out = tmp_path / "backtest"
    assert run(["backtest", "--config", config, "--out", str(out), "--schedule", str(path)]) == 0
    report = json.loads((out / "backtest.json").read_text())
    assert report["_meta"]["r_per_s"] == pytest.approx(0.0007)


def test_estimate_from_csv(tmp_path):
    t = np.arange(12001, dtype=float)
    values = 4000.0 + 20.0 * np.abs(np.mod(t, 200.0) - 100.0)
    series = tmp_path / "demand.csv"
    series.write_text("timestamp,value\n" + "".join(f"{a:.0f},{b:.1f}\n" for a, b in zip(t, values)))

    out = tmp_path / "estimate"
    code = run(["estimate", "--config", str(write_config(tmp_path)), "--out", str(out), "--input", str(series)])
    assert code == 0
    data = json.loads((out / "empirical.json").read_text())
    assert len(data["psi_hat"]) == 21
    assert np.all(np.diff(data["psi_hat"]) > 0)
    assert data["quality"]["samples"] == 12001
    consistency = data["quality"]["chain_consistency"]
    assert consistency["product"] == pytest.approx(consistency["direct"], rel=1e-9)
    assert len(data["_meta"]["input_checksum"]) > 0


def test_estimate_needs_input(tmp_path, capsys):
    assert run(["estimate", "--config", str(write_config(tmp_path))]) == 1
    payload = stderr_payload(capsys)
    assert payload["error"] == "ValidationError"

import json
import shutil
import subprocess

import pytest
import yaml

from switchlab.harness.cli import main

CONFIG = {
    "scenario": "cli_tiny",
    "dgp": {"name": "ar1", "n_units": 20, "n_periods": 8},
    "designs": [
        {"name": "cr", "kind": "cr"},
        {"name": "srsb", "kind": "srsb", "acceptance": 0.05, "balance": {"n_lags": 1}},
    ],
    "grid": {"axis": "N", "values": [20, 40, 80]},
    "replications": 4,
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(CONFIG))
    return path


def test_simulate_requires_seed(config_file, capsys):
    assert main(["simulate", str(config_file), "-q"]) == 2
    assert "seed" in capsys.readouterr().err


def test_simulate_and_slope(config_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["simulate", str(config_file), "--seed", "5", "-o", str(out), "-q", "--detail"]) == 0
    assert (out / "cli_tiny.csv").exists() and (out / "cli_tiny.json").exists()
    assert (out / "cli_tiny_replicates.csv").exists()
    capsys.readouterr()
    assert main(["slope", str(out / "cli_tiny.csv")]) == 0
    fits = json.loads(capsys.readouterr().out)
    assert {f["design"] for f in fits} == {"cr", "srsb"}
    assert all(f["points"] == 3 for f in fits)


def test_simulate_overrides(config_file, tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", str(config_file), "--seed", "1", "-M", "2", "--values", "20,40", "--designs", "cr",
                 "--formats", "csv", "-o", str(out), "-q"]) == 0
    lines = (out / "cli_tiny.csv").read_text().splitlines()
    assert len(lines) == 3
    assert not (out / "cli_tiny.json").exists()


def test_config_errors_exit_2(tmp_path, capsys):
    bad = dict(CONFIG, grid={"axis": "N", "values": [21]})
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(bad))
    assert main(["simulate", str(path), "--seed", "1", "-q"]) == 2
    assert "grid.values[0]" in capsys.readouterr().err
    assert main(["simulate", str(tmp_path / "missing.yaml"), "--seed", "1"]) == 2
    path.write_text("designs: [unclosed")
    assert main(["simulate", str(path), "--seed", "1"]) == 2
    assert main(["bogus-verb"]) == 2


def test_run_infer_replay(config_file, tmp_path, capsys):
    traj = tmp_path / "t.json"
    assert main(["run", str(config_file), "--seed", "3", "--design", "srsb", "--out", str(traj)]) == 0
    capsys.readouterr()
    assert main(["infer", str(traj), "--delta", "0.5", "--draws", "19", "--seed", "2"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert 1 / 20 <= res["pvalue"] <= 1 and res["draws"] == 19
    assert main(["replay", str(traj)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["regime"] == "none" and len(rep["per_period"]) == 8
    assert rep["block_variance"]["lo"] <= rep["estimate"] <= rep["block_variance"]["hi"]
    assert main(["run", str(config_file), "--seed", "3", "--design", "nope"]) == 2


def test_runtime_errors_exit_1(tmp_path, capsys, config_file):
    assert main(["infer", str(tmp_path / "nope.json"), "--delta", "0"]) == 1
    assert main(["slope", str(tmp_path / "nope.csv")]) == 1
    # randomization inference on a carryover trajectory is refused
    cfg = dict(CONFIG, dgp={"name": "ar1_first_order", "n_units": 8, "n_periods": 4},
               grid={"axis": "N", "values": [8]})
    path = tmp_path / "co.yaml"
    path.write_text(yaml.safe_dump(cfg))
    traj = tmp_path / "co.json"
    assert main(["run", str(path), "--seed", "1", "--design", "cr", "--out", str(traj)]) == 0
    capsys.readouterr()
    assert main(["infer", str(traj), "--delta", "0"]) == 1
    assert "carryover" in capsys.readouterr().err


@pytest.mark.skipif(shutil.which("switchlab") is None, reason="console script not installed")
def test_console_script(config_file):
    proc = subprocess.run(["switchlab", "simulate", str(config_file), "-q", "--formats", "json", "-o", "/dev/null/x",
                           "--seed", "1"], capture_output=True, text=True)
    assert proc.returncode == 1
    proc = subprocess.run(["switchlab", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "simulate" in proc.stdout

import json
import math
from pathlib import Path

import numpy as np
import pytest

from gensync.cli import (
    EXIT_ANALYSIS,
    EXIT_CHECK,
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_USAGE,
    main,
    summarize,
)
from gensync.config import load_config
from gensync.sim import read_trajectory_csv

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def parse_kv(text):
    out = {}
    for line in text.splitlines():
        if "=" in line and "," not in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


def test_usage_errors(capsys):
    assert main([]) == EXIT_USAGE
    assert main(["fly"]) == EXIT_USAGE
    assert main(["run"]) == EXIT_USAGE
    assert main(["--help"]) == EXIT_OK


def test_missing_config_is_config_error(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "o"
    code = main(["run", "--config", str(CONFIGS / "scenario_d0p25pi.json"), "--out", str(out),
                 "--horizon", "30", "--svg"])
    assert code == EXIT_OK
    for name in ("trajectory.csv", "summary.txt", "trajectory.svg"):
        assert (out / name).exists()
    stdout = capsys.readouterr().out
    assert stdout == (out / "summary.txt").read_text()
    kv = parse_kv(stdout)
    assert kv["model"] == "damped"
    assert kv["connected"] == "false"
    assert "bound.lambda" in kv and "verdict.freq_within_band" in kv


def test_summary_recomputable_from_csv(tmp_path, capsys):
    out = tmp_path / "o"
    cfg_path = CONFIGS / "scenario_d0p125pi.json"
    main(["run", "--config", str(cfg_path), "--out", str(out), "--horizon", "40"])
    kv = parse_kv((out / "summary.txt").read_text())
    data, events = read_trajectory_csv(out / "trajectory.csv")
    w0 = 120 * math.pi
    assert float(kv["max_freq_deviation"]) == pytest.approx(np.max(np.abs(data["omega3"] - w0)), rel=1e-9)
    tail = data["t"] >= 0.8 * 40
    assert float(kv["steady_speed_error"]) == pytest.approx(np.max(np.abs(data["e"][tail])), rel=1e-9)
    cfg = load_config(cfg_path, horizon=40.0)
    again = summarize(data, events, cfg.scenario)
    assert again.steady_speed_error == pytest.approx(float(kv["steady_speed_error"]), rel=1e-9)


def test_run_csv_is_byte_stable(tmp_path, capsys):
    args = ["run", "--config", str(CONFIGS / "scenario_d0p5pi.json"), "--horizon", "10", "--svg"]
    main(args + ["--out", str(tmp_path / "a")])
    main(args + ["--out", str(tmp_path / "b")])
    for name in ("trajectory.csv", "summary.txt", "trajectory.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_bounds_report(tmp_path, capsys):
    code = main(["bounds", "--config", str(CONFIGS / "leader_only.json"), "--out", str(tmp_path)])
    assert code == EXIT_OK
    kv = parse_kv(capsys.readouterr().out)
    assert float(kv["c"]) == pytest.approx(10.3796, abs=1e-3)
    assert float(kv["lambda"]) == pytest.approx(0.02655, abs=1e-4)
    assert kv["slope_ok"] == "true"
    rows = (tmp_path / "bounds.csv").read_text().splitlines()
    assert len(rows) == 4 and rows[0].startswith("lambda,c,")


def test_bounds_gain_too_small(tmp_path, capsys):
    doc = json.loads((CONFIGS / "leader_only.json").read_text())
    doc["params"] = {"k": 0.0005}
    doc["sim"]["horizon"] = 5.0
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    assert main(["bounds", "--config", str(path)]) == EXIT_ANALYSIS
    assert "GainTooSmall" in capsys.readouterr().err


def test_phase_damping_bounds(capsys):
    assert main(["bounds", "--config", str(CONFIGS / "phase_damping.json")]) == EXIT_OK
    text = capsys.readouterr().out
    assert "ltv.lam=" in text or "ltv.lambda=" in text
    assert "d,phi,certified" in text


def test_sweep_needs_section(capsys):
    assert main(["sweep", "--config", str(CONFIGS / "leader_only.json")]) == EXIT_CONFIG


def test_sweep_outputs(tmp_path, capsys):
    doc = json.loads((CONFIGS / "sweep_k_d.json").read_text())
    doc["sweep"]["k_values"] = [0.01, 0.02]
    doc["sweep"]["d_values"] = ["0.125pi", "0.25pi"]
    path = tmp_path / "s.json"
    path.write_text(json.dumps(doc))
    assert main(["sweep", "--config", str(path), "--horizon", "20", "--out", str(tmp_path)]) == EXIT_OK
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "k,d,steady_e,bound,connected,connection_time,error"
    assert len(lines) == 1 + 4 + 2


def test_validate_reduction_bad_reactances(tmp_path, capsys):
    path = tmp_path / "ho.json"
    path.write_text(json.dumps({"high_order": {"base": "default", "x_d_p": 0.2}}))
    assert main(["validate-reduction", "--config", str(path)]) == EXIT_CONFIG
    assert "high_order.x_d_p" in capsys.readouterr().err


def test_validate_reduction_default(capsys):
    code = main(["validate-reduction"])
    kv = parse_kv(capsys.readouterr().out)
    assert code == EXIT_OK
    assert kv["all_ok"] == "true"
    assert kv["compare.ok"] == "true"


def test_seed_is_accepted(tmp_path, capsys):
    assert main(["bounds", "--config", str(CONFIGS / "leader_only.json"), "--seed", "7"]) == EXIT_OK
